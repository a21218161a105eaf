#include "dmvi/distributions.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dmvi::dist {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_eigen(const Tensor& t) {
  Mat m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = t(r, c);
  return m;
}

Vec to_eigen(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

/// Cholesky factor if `cov` is positive definite, empty optional-like flag otherwise.
bool cholesky(const Tensor& cov, Eigen::LLT<Mat>& llt) {
  Mat m = to_eigen(cov);
  llt.compute(m);
  if (llt.info() != Eigen::Success) return false;
  const Vec diag = llt.matrixL().toDenseMatrix().diagonal();
  const double scale = std::sqrt(m.diagonal().maxCoeff());
  return diag.minCoeff() > 1e-12 * std::max(scale, 1e-300);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double StandardPrior::log_prob(std::span<const double> z) const {
  if (z.size() != dim) throw DimensionError("StandardPrior::log_prob: dimension mismatch");
  double s = 0.0;
  for (double v : z) s += v * v;
  return -0.5 * (s + static_cast<double>(dim) * kLog2Pi);
}

Tensor diag_sample(const DiagGaussian& q, RngStream& rng, std::size_t n) {
  if (n == 0) throw ContractError("diag_sample: n must be at least 1");
  if (q.count() != 1) throw ContractError("diag_sample: expects a single distribution; use diag_sample_rows");
  const std::size_t d = q.dim();
  Tensor out = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out(i, j) = q.mean[j] + std::exp(0.5 * q.log_var[j]) * rng.normal();
    }
  }
  return out;
}

Tensor diag_sample_rows(const DiagGaussian& q, RngStream& rng) {
  Tensor out = Tensor::matrix(q.count(), q.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = q.mean[i] + std::exp(0.5 * q.log_var[i]) * rng.normal();
  return out;
}

std::vector<double> diag_log_prob(const DiagGaussian& q, const Tensor& z) {
  require_same_shape(q.mean, q.log_var, "diag_log_prob");
  const std::size_t d = q.dim();
  if (z.cols() != d) {
    throw DimensionError("diag_log_prob: z " + shape_to_string(z.shape()) + " vs posterior " +
                         shape_to_string(q.mean.shape()));
  }
  const bool shared = q.count() == 1;
  if (!shared && q.count() != z.rows()) throw DimensionError("diag_log_prob: row counts differ");
  std::vector<double> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const std::size_t qr = shared ? 0 : i;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double lv = q.log_var(qr, j);
      const double diff = z(i, j) - q.mean(qr, j);
      s += diff * diff * std::exp(-lv) + lv + kLog2Pi;
    }
    out[i] = -0.5 * s;
  }
  return out;
}

Tensor kl_diag_standard_elementwise(const DiagGaussian& q) {
  require_same_shape(q.mean, q.log_var, "kl_diag_standard");
  Tensor out(q.mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mu = q.mean[i];
    const double lv = q.log_var[i];
    out[i] = 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
  }
  return out;
}

std::vector<double> kl_diag_standard_rows(const DiagGaussian& q) {
  Tensor e = kl_diag_standard_elementwise(q);
  std::vector<double> out(e.rows(), 0.0);
  for (std::size_t r = 0; r < e.rows(); ++r)
    for (double v : e.row_span(r)) out[r] += v;
  return out;
}

double kl_diag_standard(const DiagGaussian& q) {
  double s = 0.0;
  for (double v : kl_diag_standard_rows(q)) s += v;
  return s;
}

Moments affine_to_moments(const AffineGaussian& g) {
  const std::size_t d = g.data_dim();
  if (g.b.size() != d) {
    throw DimensionError("affine_to_moments: W " + shape_to_string(g.w.shape()) + " vs b " +
                         shape_to_string(g.b.shape()));
  }
  Moments m;
  m.mean.assign(g.b.data().begin(), g.b.data().end());
  m.cov = matmul_tn(g.w, g.w);
  Eigen::LLT<Mat> llt;
  m.degenerate = !cholesky(m.cov, llt);
  return m;
}

Tensor affine_sample(const AffineGaussian& g, RngStream& rng, std::size_t n) {
  Tensor z = rng.normal_tensor({n, g.latent_dim()});
  Tensor x = matmul(z, g.w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < g.data_dim(); ++j) x(i, j) += g.b[j];
  return x;
}

Moments diag_moments(const DiagGaussian& q, std::size_t row) {
  const std::size_t d = q.dim();
  Moments m;
  m.cov = Tensor::matrix(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    m.mean.push_back(q.mean(row, j));
    m.cov(j, j) = std::exp(q.log_var(row, j));
  }
  return m;
}

double kl_full_gauss(const Moments& p0, const Moments& p1) {
  const std::size_t d = p0.dim();
  if (p1.dim() != d || p0.cov.rows() != d || p1.cov.rows() != d) {
    throw DimensionError("kl_full_gauss: dimension mismatch (" + std::to_string(d) + " vs " +
                         std::to_string(p1.dim()) + ")");
  }
  Eigen::LLT<Mat> llt0, llt1;
  if (!cholesky(p1.cov, llt1)) throw ContractError("kl_full_gauss: second covariance is singular; KL undefined");
  if (!cholesky(p0.cov, llt0)) throw ContractError("kl_full_gauss: first covariance is singular; KL undefined");
  const Mat s0 = to_eigen(p0.cov);
  const Vec diff = to_eigen(p1.mean) - to_eigen(p0.mean);
  const double trace = llt1.solve(s0).trace();
  const double maha = diff.dot(llt1.solve(diff));
  const Mat l0 = llt0.matrixL();
  const Mat l1 = llt1.matrixL();
  double logdet0 = 0.0, logdet1 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    logdet0 += 2.0 * std::log(l0(i, i));
    logdet1 += 2.0 * std::log(l1(i, i));
  }
  return 0.5 * (trace + maha - static_cast<double>(d) + logdet1 - logdet0);
}

std::vector<double> full_gauss_log_prob(const Moments& m, const Tensor& x) {
  const std::size_t d = m.dim();
  if (x.cols() != d) throw DimensionError("full_gauss_log_prob: dimension mismatch");
  Eigen::LLT<Mat> llt;
  if (!cholesky(m.cov, llt)) throw ContractError("full_gauss_log_prob: covariance is singular");
  const Mat l = llt.matrixL();
  double logdet = 0.0;
  for (std::size_t i = 0; i < d; ++i) logdet += 2.0 * std::log(l(i, i));
  const Vec mu = to_eigen(m.mean);
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Vec diff(d);
    for (std::size_t j = 0; j < d; ++j) diff(j) = x(r, j) - mu(j);
    const Vec y = llt.matrixL().solve(diff);
    out[r] = -0.5 * (y.squaredNorm() + logdet + static_cast<double>(d) * kLog2Pi);
  }
  return out;
}

double bernoulli_log_prob(const BernoulliVisible& v, const Tensor& x) {
  if (v.logits.size() != x.size()) {
    throw DimensionError("bernoulli_log_prob: logits " + shape_to_string(v.logits.shape()) + " vs data " +
                         shape_to_string(x.shape()));
  }
  // x*l - softplus(l) == x log s(l) + (1-x) log(1-s(l))
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * v.logits[i] - softplus(v.logits[i]);
  return s;
}

double quantized_log_prob_at(const QuantizedNormalVisible& v, const Tensor& x, const Tensor& noise) {
  if (v.mean.size() != x.size() || v.log_var.size() != x.size() || noise.size() != x.size()) {
    throw DimensionError("quantized_log_prob: parameter, data and noise sizes differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] + noise[i] - v.mean[i];
    s += -0.5 * (diff * diff * std::exp(-v.log_var[i]) + v.log_var[i] + kLog2Pi);
  }
  return s;
}

double quantized_log_prob(const QuantizedNormalVisible& v, const Tensor& x, RngStream& rng) {
  Tensor noise = rng.uniform_tensor(x.shape());
  return quantized_log_prob_at(v, x, noise);
}

double log_mean_exp(std::span<const double> values) {
  if (values.empty()) throw ContractError("log_mean_exp: empty input");
  const double hi = *std::max_element(values.begin(), values.end());
  if (std::isinf(hi)) return hi;
  double s = 0.0;
  for (double v : values) s += std::exp(v - hi);
  return hi + std::log(s / static_cast<double>(values.size()));
}

namespace graph {

ad::Var bernoulli_log_prob(ad::Var logits, ad::Var x) {
  return ad::row_sum(ad::sub(ad::mul(x, logits), ad::softplus(logits)));
}

ad::Var gaussian_log_prob(ad::Var mean, ad::Var log_var, ad::Var x) {
  ad::Var diff = ad::sub(x, mean);
  ad::Var quad = ad::mul(ad::square(diff), ad::exp(ad::neg(log_var)));
  return ad::scale(ad::row_sum(ad::add_scalar(ad::add(quad, log_var), kLog2Pi)), -0.5);
}

ad::Var kl_diag_standard(ad::Var mean, ad::Var log_var) {
  ad::Var terms = ad::sub(ad::add(ad::square(mean), ad::exp(log_var)), ad::add_scalar(log_var, 1.0));
  return ad::scale(ad::row_sum(terms), 0.5);
}

ad::Var reparameterize(ad::Var mean, ad::Var log_var, ad::Var eps) {
  return ad::add(mean, ad::mul(ad::exp(ad::scale(log_var, 0.5)), eps));
}

}  // namespace graph

}  // namespace dmvi::dist
