#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dmvi/distributions.hpp"
#include "dmvi/nn.hpp"
#include "dmvi/rng.hpp"

namespace dmvi::est {

enum class Method { kMc, kRatio, kGmm, kAr };

const char* method_name(Method m);

struct EstimateReport {
  Method method = Method::kMc;
  double value = 0.0;  ///< nats
  std::size_t num_z = 0;
  std::size_t inner_samples = 0;  ///< posterior evaluations per z (dataset size for MC)
  double std_error = 0.0;
  bool valid = true;
  std::string note;
};

/// Encoder posteriors for every dataset row, with the per-row constants of
/// the log density precomputed. Row n is q(z | x_n).
class PosteriorTable {
 public:
  explicit PosteriorTable(dist::DiagGaussian posteriors);

  std::size_t size() const { return q_.count(); }
  std::size_t dim() const { return q_.dim(); }
  const dist::DiagGaussian& posteriors() const { return q_; }

  /// log (1/N) sum_n q(z | x_n)
  double marginal_log_q(std::span<const double> z) const;
  /// log q(z | x_n) for every n.
  void conditional_log_q(std::span<const double> z, std::vector<double>& out) const;
  /// One reparameterized draw from q(z | x_row).
  std::vector<double> sample(std::size_t row, RngStream& rng) const;
  /// Mean over rows of KL(q(z|x_n) || N(0, I)).
  double average_kl() const;

 private:
  dist::DiagGaussian q_;
  std::vector<double> inv_var_;
  std::vector<double> log_norm_;
};

double marginal_log_q(std::span<const double> z, const PosteriorTable& table);

/// Draws z_i from q(z | x_i) with x_i uniform over the dataset and averages
/// log q(z_i) - log p(z_i). Index i uses substream i of `rng`.
EstimateReport mc_marginal_kl(const PosteriorTable& table, std::size_t num_z, const RngStream& rng);

struct RatioClassifierConfig {
  std::size_t hidden_layers = 3;
  std::size_t width = 32;
  std::size_t iterations = 4000;
  std::size_t batch = 256;  ///< per class
  double lr = 1e-4;
  double train_fraction = 0.8;
};

/// Density ratio trick: a classifier with label 1 for q-samples and 0 for
/// p-samples; KL(q || p) is the held-out mean of its logit on q-samples.
EstimateReport ratio_kl(const Tensor& samples_q, const Tensor& samples_p, const RatioClassifierConfig& config,
                        const RngStream& rng);

struct GmmModel {
  std::vector<double> weights;
  Tensor means;      ///< k x d
  Tensor variances;  ///< k x d

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.cols(); }
  double log_prob(std::span<const double> z) const;
  /// Posterior component probabilities for z.
  std::vector<double> responsibilities(std::span<const double> z) const;
};

struct GmmFitResult {
  GmmModel model;
  std::vector<double> log_likelihood;  ///< mean data log-likelihood after each EM iteration
  std::size_t reseeds = 0;
};

inline constexpr double kGmmVarianceFloor = 1e-6;

GmmFitResult gmm_fit(const Tensor& samples, std::size_t k, std::size_t iterations, const RngStream& rng);

struct ArConfig {
  std::size_t hidden = 32;
  std::size_t iterations = 2000;
  std::size_t batch = 128;
  double lr = 1e-3;
};

/// q(z) = prod_i N(z_i | mu_i(z_<i), sigma_i(z_<i)^2), one perceptron per
/// coordinate fed with the prefix. Coordinate 0 has free parameters.
class ArGaussModel {
 public:
  ArGaussModel() = default;
  ArGaussModel(std::size_t dim, const ArConfig& config, RngStream& rng);

  std::size_t dim() const { return dim_; }
  double log_prob(std::span<const double> z) const;
  std::vector<double> log_prob_rows(const Tensor& z) const;
  /// Mean log-likelihood of `batch` as a graph on `tape`; nets are bound as leaves into `bound` when it is empty.
  ad::Var mean_log_prob(ad::Tape& tape, const Tensor& batch, std::vector<BoundParams>& bound) const;
  std::vector<TrainableNet>& nets() { return nets_; }
  const std::vector<TrainableNet>& nets() const { return nets_; }

 private:
  std::size_t dim_ = 0;
  std::vector<TrainableNet> nets_;  ///< nets_[i] maps z_<i (or a constant 1 for i = 0) -> (mu, log var)
};

struct ArFitResult {
  ArGaussModel model;
  std::vector<double> log_likelihood;  ///< minibatch mean log-likelihood per iteration
};

ArFitResult ar_fit(const Tensor& samples, const ArConfig& config, const RngStream& rng);

using LogDensity = std::function<double(std::span<const double>)>;

/// Plug-in estimate mean_i [log t(z_i) - log p(z_i)] with z_i drawn as in mc_marginal_kl.
EstimateReport density_model_kl(const LogDensity& log_t, Method tag, const PosteriorTable& table,
                                std::size_t num_z, const RngStream& rng);

/// avg_posterior_kl - ln N, a lower bound on the marginal KL since MI <= ln N.
double marginal_kl_floor(double avg_posterior_kl, std::size_t dataset_size);

struct SurgeryReport {
  double avg_kl = 0.0;
  EstimateReport marginal;
  double mutual_info = 0.0;
  double floor = 0.0;
};

SurgeryReport surgery_decompose(const PosteriorTable& table, std::size_t num_z, const RngStream& rng);

/// Draws num_z aggregate-posterior samples (x uniform, z ~ q(z|x)).
Tensor sample_aggregate(const PosteriorTable& table, std::size_t num_z, const RngStream& rng);

}  // namespace dmvi::est
