#include <cmath>
#include <functional>
#include <string>

#include "doctest.h"
#include "dmvi/adam.hpp"
#include "dmvi/autodiff.hpp"
#include "dmvi/nn.hpp"
#include "dmvi/rng.hpp"
#include "dmvi/tensor.hpp"

using namespace dmvi;

namespace {

/// Random tensor whose entries stay at least `margin` away from zero.
Tensor away_from_zero(RngStream& rng, Shape shape, double margin) {
  Tensor t = rng.normal_tensor(std::move(shape));
  for (auto& v : t.data()) {
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return t;
}

/// Weighted sum keeps every output coordinate in the loss with a distinct coefficient.
ad::Var probe_loss(ad::Var y, const Tensor& weights) {
  return ad::sum(ad::mul(y, ad::constant_like(y, weights)));
}

}  // namespace

TEST_CASE("matmul examples") {
  Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(matmul(a, Tensor::matrix({{1, 0}, {0, 1}})) == a);
  Tensor b = Tensor::matrix({{5}, {6}});
  CHECK(matmul(a, b) == Tensor::matrix({{17}, {39}}));
  Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  Tensor rnd = RngStream(3).normal_tensor({2, 5});
  CHECK(matmul(eye, rnd) == rnd);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::matrix(2, 3);
  Tensor b = Tensor::matrix(2, 3);
  try {
    (void)matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  ad::Tape tape;
  CHECK_THROWS_AS(ad::matmul(tape.leaf(a), tape.leaf(b)), DimensionError);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
  Tensor t({2, 3, 4});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 12);
  CHECK_THROWS_AS((void)t.reshaped({5, 5}), DimensionError);
}

TEST_CASE("backward: quadratic, constant, non-scalar loss") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor::row({1.0, -2.0}));
  tape.backward(ad::sum(ad::square(x)));
  CHECK(tape.grad(x) == Tensor::row({2.0, -4.0}));

  ad::Tape t2;
  ad::Var y = t2.leaf(Tensor::row({0.3, 0.7}));
  ad::Var c = t2.constant(Tensor::scalar(5.0));
  ad::Var loss = ad::add(c, ad::scale(ad::sum(y), 0.0));
  t2.backward(loss);
  CHECK(t2.grad(y) == Tensor::row({0.0, 0.0}));

  ad::Tape t3;
  ad::Var z = t3.leaf(Tensor::row({1.0, 2.0}));
  CHECK_THROWS_AS(t3.backward(ad::square(z)), ContractError);
}

TEST_CASE("backward sums fan-out contributions") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor::scalar(3.0));
  // x*x + x + x -> 2x + 2
  ad::Var loss = ad::add(ad::add(ad::mul(x, x), x), x);
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == doctest::Approx(8.0).epsilon(1e-15));
}

TEST_CASE("tape parents precede children") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor::row({1.0, 2.0}));
  ad::Var y = ad::softplus(ad::scale(x, 2.0));
  (void)ad::sum(ad::mul(y, x));
  for (std::size_t i = 0; i < tape.size(); ++i) {
    for (auto p : tape.parents(i)) CHECK(p < i);
  }
}

TEST_CASE("every primitive matches central differences at 20 random points") {
  struct Case {
    const char* name;
    std::function<ad::Var(ad::Var, ad::Var)> op;
    bool binary;
    bool positive;
  };
  const std::vector<Case> cases = {
      {"matmul", [](ad::Var a, ad::Var b) { return ad::matmul(a, ad::reshape(b, {4, 3})); }, true, false},
      {"add", [](ad::Var a, ad::Var b) { return ad::add(a, b); }, true, false},
      {"add_row_broadcast", [](ad::Var a, ad::Var b) { return ad::add(a, ad::slice_cols(ad::reshape(b, {1, 12}), 0, 4)); }, true, false},
      {"mul", [](ad::Var a, ad::Var b) { return ad::mul(a, b); }, true, false},
      {"sigmoid", [](ad::Var a, ad::Var) { return ad::sigmoid(a); }, false, false},
      {"log", [](ad::Var a, ad::Var) { return ad::log(a); }, false, true},
      {"exp", [](ad::Var a, ad::Var) { return ad::exp(a); }, false, false},
      {"softplus", [](ad::Var a, ad::Var) { return ad::softplus(a); }, false, false},
      {"leaky_relu", [](ad::Var a, ad::Var) { return ad::leaky_relu(a, 0.2); }, false, false},
      {"sum", [](ad::Var a, ad::Var) { return ad::sum(ad::square(a)); }, false, false},
      {"mean", [](ad::Var a, ad::Var) { return ad::mean(ad::mul(a, a)); }, false, false},
      {"l1_norm", [](ad::Var a, ad::Var) { return ad::l1_norm(a); }, false, false},
      {"row_l1", [](ad::Var a, ad::Var) { return ad::row_l1(a); }, false, false},
      {"concat", [](ad::Var a, ad::Var b) { return ad::concat_cols(a, ad::reshape(b, {3, 4})); }, true, false},
  };
  for (const auto& c : cases) {
    SUBCASE(c.name) {
      RngStream rng(17);
      double worst = 0.0;
      for (int point = 0; point < 20; ++point) {
        Tensor a = away_from_zero(rng, {3, 4}, 0.05);
        if (c.positive)
          for (auto& v : a.data()) v = std::abs(v) + 0.1;
        Tensor b = away_from_zero(rng, {3, 4}, 0.05);
        Tensor w;
        {
          ad::Tape tape;
          auto shape = c.op(tape.constant(a), tape.constant(b)).value().shape();
          w = rng.normal_tensor(shape);
        }
        LossBuilder loss = [&](ad::Tape&, std::span<const ad::Var> v) { return probe_loss(c.op(v[0], v[1]), w); };
        std::vector<Tensor> params = {a, b};
        worst = std::max(worst, grad_check(loss, params, {.probes = c.binary ? 24 : 12, .epsilon = 1e-5,
                                                          .seed = static_cast<std::uint64_t>(point)}));
      }
      CHECK(worst <= 1e-6);
    }
  }
}

TEST_CASE("backward is linear in the loss") {
  RngStream rng(5);
  Tensor x0 = rng.normal_tensor({2, 3});
  auto l1 = [](ad::Var x) { return ad::sum(ad::softplus(x)); };
  // Single path from x to each loss and power-of-two coefficients: the only
  // setting in which floating-point linearity can be bitwise.
  auto l2 = [](ad::Var x) { return ad::mean(ad::exp(x)); };
  ad::Tape ta, tb, tc;
  ad::Var xa = ta.leaf(x0), xb = tb.leaf(x0), xc = tc.leaf(x0);
  ta.backward(l1(xa));
  tb.backward(l2(xb));
  tc.backward(ad::add(ad::scale(l1(xc), 2.0), ad::scale(l2(xc), -0.5)));
  const Tensor& g1 = ta.grad(xa);
  const Tensor& g2 = tb.grad(xb);
  const Tensor& g = tc.grad(xc);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 2.0 * g1[i] + -0.5 * g2[i]);
}

TEST_CASE("backward is linear in the loss: shared paths agree to rounding") {
  RngStream rng(6);
  Tensor x0 = rng.normal_tensor({3, 4});
  Tensor w0 = rng.normal_tensor({4, 2});
  auto l1 = [&](ad::Var x) { return ad::sum(ad::sigmoid(ad::matmul(x, ad::constant_like(x, w0)))); };
  auto l2 = [](ad::Var x) { return ad::mean(ad::mul(x, ad::exp(x))); };
  ad::Tape ta, tb, tc;
  ad::Var xa = ta.leaf(x0), xb = tb.leaf(x0), xc = tc.leaf(x0);
  ta.backward(l1(xa));
  tb.backward(l2(xb));
  tc.backward(ad::add(ad::scale(l1(xc), 3.0), ad::scale(l2(xc), -1.7)));
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double expect = 3.0 * ta.grad(xa)[i] - 1.7 * tb.grad(xb)[i];
    CHECK(std::abs(tc.grad(xc)[i] - expect) <= 1e-15 * std::max(1.0, std::abs(expect)));
  }
}

TEST_CASE("adam: zero gradient leaves params and bumps t") {
  Tensor p = Tensor::row({1.0, -2.0});
  AdamState state;
  Tensor* params[] = {&p};
  std::vector<Tensor> grads = {Tensor::row({0.0, 0.0})};
  adam_step(params, grads, state, 1e-3);
  CHECK(p == Tensor::row({1.0, -2.0}));
  CHECK(state.t == 1);
  CHECK(state.config.beta1 == 0.5);
  CHECK(state.config.beta2 == 0.9);
}

TEST_CASE("adam: first step is -lr*sign(g), second step no larger") {
  const double lr = 1e-3;
  Tensor p = Tensor::row({0.0, 0.0, 0.0});
  AdamState state;
  Tensor* params[] = {&p};
  std::vector<Tensor> grads = {Tensor::row({0.3, -4.0, 1e-2})};
  adam_step(params, grads, state, lr);
  Tensor after1 = p;
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = grads[0][i];
    const double expected = -lr * g / (std::abs(g) + 1e-8);
    CHECK(after1[i] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(after1[i] + lr * (g > 0 ? 1 : -1)) < lr * 1e-5);
  }
  adam_step(params, grads, state, lr);
  for (std::size_t i = 0; i < 3; ++i) {
    const double u2 = std::abs(p[i] - after1[i]);
    CHECK(u2 <= std::abs(after1[i]) * (1 + 1e-9));
  }
  CHECK(state.t == 2);
}

TEST_CASE("adam: non-finite gradient refuses the step") {
  Tensor p = Tensor::row({1.0});
  AdamState state;
  Tensor* params[] = {&p};
  std::vector<Tensor> grads = {Tensor::row({std::nan("")})};
  CHECK_THROWS_AS(adam_step(params, grads, state, 1e-3), NumericError);
  CHECK(p[0] == 1.0);
  CHECK(state.t == 0);
  std::vector<Tensor> ok = {Tensor::row({1.0})};
  CHECK_THROWS_AS(adam_step(params, ok, state, 0.0), ContractError);
}

namespace {

std::vector<Tensor> mlp_params(const Mlp& net) {
  std::vector<Tensor> out;
  for (const Tensor* p : net.parameters()) out.push_back(*p);
  return out;
}

LossBuilder mlp_loss(const Mlp& net, Tensor x, Tensor target) {
  return [&net, x = std::move(x), target = std::move(target)](ad::Tape& tape, std::span<const ad::Var> p) {
    BoundParams b{{p.begin(), p.end()}, true};
    ad::Var y = net.forward(b, tape.constant(x));
    return ad::sum(ad::mul(y, tape.constant(target)));
  };
}

}  // namespace

TEST_CASE("grad_check: linear map is exact") {
  RngStream rng(1);
  Mlp net({5, 3}, Activation::kIdentity, Activation::kIdentity, rng);
  Tensor x = rng.normal_tensor({4, 5});
  RngStream fixed(2);
  Tensor w = fixed.normal_tensor({4, 3});
  LossBuilder lin = [&](ad::Tape& tape, std::span<const ad::Var> p) {
    BoundParams b{{p.begin(), p.end()}, true};
    return ad::sum(ad::mul(net.forward(b, tape.constant(x)), tape.constant(w)));
  };
  CHECK(grad_check(lin, mlp_params(net), {.probes = 20}) <= 1e-9);
}

TEST_CASE("grad_check: sigmoid chain of depth 4") {
  RngStream rng(2);
  Mlp net({6, 8, 8, 8, 2}, Activation::kSigmoid, Activation::kSigmoid, rng);
  CHECK(grad_check(mlp_loss(net, rng.normal_tensor({5, 6}), rng.normal_tensor({5, 2})), mlp_params(net),
                   {.probes = 40}) <= 1e-6);
}

TEST_CASE("grad_check: leaky-rectifier net away from kinks") {
  RngStream rng(3);
  Mlp net({6, 10, 10, 10, 3}, Activation::kLeakyRelu, Activation::kIdentity, rng);
  CHECK(grad_check(mlp_loss(net, rng.normal_tensor({5, 6}), rng.normal_tensor({5, 3})), mlp_params(net),
                   {.probes = 40}) <= 1e-6);
}

TEST_CASE("grad_check propagates NaN") {
  LossBuilder loss = [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::log(p[0])); };
  CHECK(std::isnan(grad_check(loss, {Tensor::row({-1.0, -2.0})}, {.probes = 2})));
}

TEST_CASE("mlp evaluate agrees with tape forward bitwise") {
  RngStream rng(9);
  Mlp net({4, 7, 7, 2}, Activation::kLeakyRelu, Activation::kSigmoid, rng);
  Tensor x = rng.normal_tensor({3, 4});
  ad::Tape tape;
  Tensor y = net.forward(net.bind(tape, false), tape.constant(x)).value();
  CHECK(y == net.evaluate(x));
}

TEST_CASE("rng: fixed seed reproduces, substreams differ") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c(42, 0);
  CHECK(c.normal() == RngStream(42).normal());
  CHECK(RngStream(42).substream(1).next_u64() != RngStream(42).substream(2).next_u64());
  CHECK(RngStream(1).next_u64() != RngStream(2).next_u64());
  // Counter addressing: resuming at counter k reproduces the k+1-th draw.
  RngStream d(7);
  for (int i = 0; i < 5; ++i) d.next_u64();
  RngStream e(7, 5);
  CHECK(d.next_u64() == e.next_u64());
}
