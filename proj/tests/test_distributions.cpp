#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "dmvi/distributions.hpp"
#include "dmvi/errors.hpp"
#include "oracles.hpp"

using namespace dmvi;
using namespace dmvi::dist;

namespace {

DiagGaussian diag(std::vector<double> mu, std::vector<double> lv) {
  return {Tensor::row(std::move(mu)), Tensor::row(std::move(lv))};
}

}  // namespace

TEST_CASE("diag_sample: degenerate variance returns the mean") {
  RngStream rng(4);
  const auto z = diag_sample(diag({1.5, -2.0}, {-40.0, -40.0}), rng, 50);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    CHECK(std::abs(z(i, 0) - 1.5) < 1e-8);
    CHECK(std::abs(z(i, 1) + 2.0) < 1e-8);
  }
}

TEST_CASE("diag_sample: fixed seed reproduces draws") {
  RngStream a(99), b(99);
  const auto q = diag({0.3}, {0.2});
  CHECK(diag_sample(q, a, 100) == diag_sample(q, b, 100));
}

TEST_CASE("diag_sample: sample mean within CLT bound") {
  RngStream rng(1);
  const auto z = diag_sample(diag({0.0}, {0.0}), rng, 100000);
  double m = 0.0;
  for (double v : z.data()) m += v;
  m /= 1e5;
  CHECK(std::abs(m) <= 3.0 / std::sqrt(1e5));
}

TEST_CASE("diag_sample: zero draws is a contract error") {
  RngStream rng(0);
  CHECK_THROWS_AS(diag_sample(diag({0.0}, {0.0}), rng, 0), ContractError);
}

TEST_CASE("diag_log_prob: standard normal at zero") {
  const auto lp = diag_log_prob(diag({0.0}, {0.0}), Tensor::matrix({{0.0}}));
  CHECK(lp[0] == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
  CHECK(lp[0] == doctest::Approx(-0.9189).epsilon(1e-4));
}

TEST_CASE("diag_log_prob: value at the mode") {
  const auto q = diag({0.4, -1.0, 2.0}, {0.1, -0.7, 1.3});
  const double expect = -0.5 * ((std::log(2 * std::numbers::pi) + 0.1) + (std::log(2 * std::numbers::pi) - 0.7) +
                                (std::log(2 * std::numbers::pi) + 1.3));
  CHECK(diag_log_prob(q, q.mean)[0] == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("diag_log_prob: random 1-D cases agree with the density formula and integrate to one") {
  RngStream rng(7);
  for (int t = 0; t < 10; ++t) {
    const double mu = rng.uniform(-2, 2), lv = rng.uniform(-1.5, 1.5);
    const auto q = diag({mu}, {lv});
    const double var = std::exp(lv);
    for (int k = 0; k < 5; ++k) {
      const double z = rng.uniform(-4, 4);
      const double lp = diag_log_prob(q, Tensor::matrix({{z}}))[0];
      CHECK(std::abs(std::exp(lp) - oracle::normal_pdf(z, mu, var)) <= 1e-9);
    }
    const double sd = std::sqrt(var);
    const double mass = oracle::simpson(
        [&](double z) { return std::exp(diag_log_prob(q, Tensor::matrix({{z}}))[0]); }, mu - 12 * sd, mu + 12 * sd);
    CHECK(std::abs(mass - 1.0) <= 1e-9);
  }
}

TEST_CASE("kl_diag_standard examples") {
  CHECK(kl_diag_standard(diag({0.0, 0.0}, {0.0, 0.0})) == 0.0);
  const double quad = oracle::kl_quadrature([](double x) { return oracle::normal_pdf(x, 1, 1); },
                                            [](double x) { return oracle::normal_pdf(x, 0, 1); }, -15, 15);
  CHECK(quad == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(kl_diag_standard(diag({1.0}, {0.0})) == doctest::Approx(quad).epsilon(1e-9));

  RngStream rng(11);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 1 + rng.below(6);
    DiagGaussian q{rng.normal_tensor({1, d}, 0, 2), rng.normal_tensor({1, d}, 0, 2)};
    CHECK(kl_diag_standard(q) >= 0.0);
  }
}

TEST_CASE("affine_to_moments examples") {
  AffineGaussian g{Tensor::matrix({{1.0}, {0.0}}), Tensor::row({3.0})};
  const auto m = affine_to_moments(g);
  CHECK(m.mean == std::vector<double>{3.0});
  CHECK(m.cov == Tensor::matrix({{1.0}}));
  CHECK_FALSE(m.degenerate);

  AffineGaussian zero{Tensor::matrix(3, 2, 0.0), Tensor::row({0.0, 0.0})};
  const auto mz = affine_to_moments(zero);
  CHECK(mz.cov == Tensor::matrix(2, 2, 0.0));
  CHECK(mz.degenerate);
}

TEST_CASE("affine_to_moments: covariance matches pushforward samples") {
  RngStream rng(21);
  AffineGaussian g{rng.normal_tensor({4, 3}), rng.normal_tensor({1, 3})};
  const auto m = affine_to_moments(g);
  const std::size_t n = 100000;
  const Tensor x = affine_sample(g, rng, n);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      // Products against the known mean; their sample mean estimates cov(a, b).
      std::vector<double> prod(n);
      for (std::size_t i = 0; i < n; ++i) prod[i] = (x(i, a) - m.mean[a]) * (x(i, b) - m.mean[b]);
      const auto s = oracle::mean_se(prod);
      CHECK(std::abs(s.mean - m.cov(a, b)) <= 3 * s.se);
    }
}

TEST_CASE("kl_full_gauss examples") {
  Moments a{{0.5, -1.0}, Tensor::matrix({{2.0, 0.3}, {0.3, 1.0}})};
  CHECK(std::abs(kl_full_gauss(a, a)) < 1e-14);

  Moments p0{{0.0, 0.0}, Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}})};
  Moments p1{{0.0, 0.0}, Tensor::matrix({{4.0, 0.0}, {0.0, 4.0}})};
  const double expect = 0.5 * (0.5 - 2.0 + std::log(16.0));
  CHECK(kl_full_gauss(p0, p1) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(kl_full_gauss(p0, p1) == doctest::Approx(0.6363).epsilon(1e-4));

  // MC cross-check of the same pair: mean of log p0 - log p1 over p0 samples.
  RngStream rng(5);
  const Tensor x = rng.normal_tensor({100000, 2});
  std::vector<double> terms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double r2 = x(i, 0) * x(i, 0) + x(i, 1) * x(i, 1);
    terms[i] = -0.5 * r2 + 0.5 * r2 / 4.0 + std::log(4.0);
  }
  const auto s = oracle::mean_se(terms);
  CHECK(std::abs(s.mean - expect) <= 3 * s.se);

  Moments u0{{0.0}, Tensor::matrix({{1.0}})}, u1{{1.0}, Tensor::matrix({{1.0}})};
  const double quad = oracle::kl_quadrature([](double v) { return oracle::normal_pdf(v, 0, 1); },
                                            [](double v) { return oracle::normal_pdf(v, 1, 1); }, -15, 15);
  CHECK(kl_full_gauss(u0, u1) == doctest::Approx(quad).epsilon(1e-9));
  CHECK(kl_full_gauss(u0, u1) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("kl_full_gauss: singular covariance is rejected") {
  Moments ok{{0.0, 0.0}, Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}})};
  Moments bad{{0.0, 0.0}, Tensor::matrix({{1.0, 1.0}, {1.0, 1.0}})};
  CHECK_THROWS_AS(kl_full_gauss(ok, bad), ContractError);
  CHECK_THROWS_AS(kl_full_gauss(bad, ok), ContractError);
}

TEST_CASE("kl_diag_standard agrees with kl_full_gauss on diagonal moments") {
  RngStream rng(8);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 1 + rng.below(8);
    DiagGaussian q{rng.normal_tensor({1, d}), rng.normal_tensor({1, d}, 0, 0.7)};
    Moments prior{std::vector<double>(d, 0.0), Tensor::matrix(d, d)};
    for (std::size_t j = 0; j < d; ++j) prior.cov(j, j) = 1.0;
    CHECK(std::abs(kl_diag_standard(q) - kl_full_gauss(diag_moments(q), prior)) <= 1e-10);
  }
}

TEST_CASE("affine density integrates to one in one dimension") {
  RngStream rng(3);
  AffineGaussian g{rng.normal_tensor({5, 1}), Tensor::row({0.7})};
  const auto m = affine_to_moments(g);
  const double sd = std::sqrt(m.cov(0, 0));
  const double mass = oracle::simpson(
      [&](double x) { return std::exp(full_gauss_log_prob(m, Tensor::matrix({{x}}))[0]); }, 0.7 - 12 * sd,
      0.7 + 12 * sd);
  CHECK(std::abs(mass - 1.0) <= 1e-6);
}

TEST_CASE("bernoulli_log_prob examples") {
  CHECK(bernoulli_log_prob({Tensor::row({0.0})}, Tensor::row({1.0})) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
  const double big = bernoulli_log_prob({Tensor::row({40.0})}, Tensor::row({1.0}));
  CHECK(std::isfinite(big));
  CHECK(std::abs(big) < 1e-15);
  CHECK(std::isfinite(bernoulli_log_prob({Tensor::row({-800.0})}, Tensor::row({1.0}))));

  ad::Tape tape;
  auto l = tape.leaf(Tensor::matrix({{0.0}}));
  tape.backward(ad::sum(graph::bernoulli_log_prob(l, tape.constant(Tensor::matrix({{1.0}})))));
  CHECK(tape.grad(l)[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("quantized_log_prob: unit-variance mean gradient is (x + u) - m") {
  const Tensor x = Tensor::matrix({{3.0, 0.0, 7.0}});
  const Tensor u = Tensor::matrix({{0.25, 0.5, 0.875}});
  const Tensor m = Tensor::matrix({{2.0, 1.0, 7.5}});
  ad::Tape tape;
  auto mv = tape.leaf(m);
  Tensor target = x;
  for (std::size_t i = 0; i < 3; ++i) target[i] += u[i];
  auto lp = graph::gaussian_log_prob(mv, tape.constant(Tensor::matrix(1, 3, 0.0)), tape.constant(target));
  tape.backward(ad::sum(lp));
  for (std::size_t i = 0; i < 3; ++i) CHECK(tape.grad(mv)[i] == doctest::Approx(x[i] + u[i] - m[i]).epsilon(1e-15));
  CHECK(lp.value().item() ==
        doctest::Approx(quantized_log_prob_at({m, Tensor::matrix(1, 3, 0.0)}, x, u)).epsilon(1e-14));
}

TEST_CASE("quantized_log_prob: sharp density at x + 0.5 beats any Bernoulli value") {
  const Tensor x = Tensor::matrix({{0.0, 1.0, 1.0, 0.0}});
  Tensor mean = x;
  for (auto& v : mean.data()) v += 0.5;
  const double lv = std::log(1e-3);
  // Plug-in at the centre of each dequantization cell.
  const double qn = quantized_log_prob_at({mean, Tensor::matrix(1, 4, lv)}, x, Tensor::matrix(1, 4, 0.5));
  CHECK(qn == doctest::Approx(-2.0 * (lv + std::log(2 * std::numbers::pi))).epsilon(1e-14));
  // Bernoulli log-probabilities are never positive; the best fit is ~0.
  CHECK(qn > 10.0);
  CHECK(qn > bernoulli_log_prob({Tensor::matrix({{-40.0, 40.0, 40.0, -40.0}})}, x) + 10.0);
}

TEST_CASE("quantized_log_prob: seeded noise is reproducible") {
  const QuantizedNormalVisible v{Tensor::matrix({{0.5, 1.5}}), Tensor::matrix({{0.0, -0.3}})};
  const Tensor x = Tensor::matrix({{0.0, 1.0}});
  RngStream a(10), b(10);
  CHECK(quantized_log_prob(v, x, a) == quantized_log_prob(v, x, b));
}

TEST_CASE("bernoulli and unit-variance Gaussian gradients share the form x - mean") {
  RngStream rng(31);
  for (int t = 0; t < 100; ++t) {
    const double x = static_cast<double>(rng.below(2));
    const double logit = rng.normal(0, 3);
    const double mean = 1.0 / (1.0 + std::exp(-logit));

    ad::Tape tb;
    auto lb = tb.leaf(Tensor::matrix({{logit}}));
    tb.backward(ad::sum(graph::bernoulli_log_prob(lb, tb.constant(Tensor::matrix({{x}})))));

    ad::Tape tg;
    auto mg = tg.leaf(Tensor::matrix({{mean}}));
    tg.backward(ad::sum(graph::gaussian_log_prob(mg, tg.constant(Tensor::matrix({{0.0}})), tg.constant(Tensor::matrix({{x}})))));

    CHECK(tb.grad(lb)[0] == doctest::Approx(x - mean).epsilon(1e-12));
    CHECK(tg.grad(mg)[0] == doctest::Approx(x - mean).epsilon(1e-12));
  }
}

TEST_CASE("log_mean_exp examples") {
  const std::vector<double> one{-3.25};
  CHECK(log_mean_exp(one) == -3.25);
  const std::vector<double> big{1000.0, 1000.0};
  CHECK(log_mean_exp(big) == 1000.0);
  const std::vector<double> two{0.0, std::log(3.0)};
  CHECK(log_mean_exp(two) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(log_mean_exp(std::vector<double>{}), ContractError);
}

TEST_CASE("standard prior log density") {
  const StandardPrior p{3};
  const std::vector<double> z{0.5, -1.0, 2.0};
  double expect = 0.0;
  for (double v : z) expect += std::log(oracle::normal_pdf(v, 0, 1));
  CHECK(p.log_prob(z) == doctest::Approx(expect).epsilon(1e-14));
}
