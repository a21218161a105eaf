#pragma once

#include <span>
#include <vector>

#include "dmvi/autodiff.hpp"
#include "dmvi/rng.hpp"
#include "dmvi/tensor.hpp"

namespace dmvi::dist {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Diagonal Gaussian, one distribution per row of `mean` / `log_var`.
struct DiagGaussian {
  Tensor mean;
  Tensor log_var;

  std::size_t count() const { return mean.rows(); }
  std::size_t dim() const { return mean.cols(); }
};

/// x = W^T z + b with z ~ N(0, I_k); W is k x d and b has d entries.
struct AffineGaussian {
  Tensor w;
  Tensor b;

  std::size_t latent_dim() const { return w.rows(); }
  std::size_t data_dim() const { return w.cols(); }
};

/// Mean vector and full covariance.
struct Moments {
  std::vector<double> mean;
  Tensor cov;
  bool degenerate = false;

  std::size_t dim() const { return mean.size(); }
};

struct BernoulliVisible {
  Tensor logits;
};

/// Gaussian over dequantized data x + u, u ~ U[0, 1).
struct QuantizedNormalVisible {
  Tensor mean;
  Tensor log_var;
};

/// Product of d univariate standard normals.
struct StandardPrior {
  std::size_t dim;

  double log_prob(std::span<const double> z) const;
  Tensor sample(RngStream& rng, std::size_t n) const { return rng.normal_tensor({n, dim}); }
};

/// n reparameterized draws mu + sigma * eps from a single-row q.
Tensor diag_sample(const DiagGaussian& q, RngStream& rng, std::size_t n);
/// One draw per row of q.
Tensor diag_sample_rows(const DiagGaussian& q, RngStream& rng);
/// Log density of each row of z; q is either a single row (shared) or one row per z row.
std::vector<double> diag_log_prob(const DiagGaussian& q, const Tensor& z);
/// Sum over rows of KL(q_row || N(0, I)).
double kl_diag_standard(const DiagGaussian& q);
/// KL(q_row || N(0, I)) per row.
std::vector<double> kl_diag_standard_rows(const DiagGaussian& q);
/// Per-coordinate KL, [rows x d].
Tensor kl_diag_standard_elementwise(const DiagGaussian& q);

Moments affine_to_moments(const AffineGaussian& g);
Tensor affine_sample(const AffineGaussian& g, RngStream& rng, std::size_t n);
Moments diag_moments(const DiagGaussian& q, std::size_t row = 0);
/// KL(p0 || p1); throws ContractError if either covariance is not positive definite.
double kl_full_gauss(const Moments& p0, const Moments& p1);
/// Log density of each row of x under a full-covariance Gaussian.
std::vector<double> full_gauss_log_prob(const Moments& m, const Tensor& x);

/// Sum over all entries; targets in [0, 1].
double bernoulli_log_prob(const BernoulliVisible& v, const Tensor& x);
/// Sum over all entries of the Gaussian log density at x + u with fresh u.
double quantized_log_prob(const QuantizedNormalVisible& v, const Tensor& x, RngStream& rng);
/// Same, with the dequantization noise supplied.
double quantized_log_prob_at(const QuantizedNormalVisible& v, const Tensor& x, const Tensor& noise);

/// log(mean(exp(values))), shifted by the max. Empty input is a contract error.
double log_mean_exp(std::span<const double> values);

// Differentiable counterparts used by the trainers; all return one value per row.
namespace graph {

ad::Var bernoulli_log_prob(ad::Var logits, ad::Var x);
ad::Var gaussian_log_prob(ad::Var mean, ad::Var log_var, ad::Var x);
ad::Var kl_diag_standard(ad::Var mean, ad::Var log_var);
/// mean + exp(log_var / 2) * eps
ad::Var reparameterize(ad::Var mean, ad::Var log_var, ad::Var eps);

}  // namespace graph

}  // namespace dmvi::dist
