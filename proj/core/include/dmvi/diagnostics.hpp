#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmvi/models.hpp"

namespace dmvi::diag {

// ---------------------------------------------------------------- low-posterior samples

enum class DecodeMode { kMean, kSample };

struct LowPosteriorResult {
  Tensor latents;                    ///< n x latent, ascending log q
  Tensor samples;                    ///< n x data_dim
  std::vector<double> log_q;         ///< n lowest scores, ascending
  std::vector<std::size_t> indices;  ///< candidate index of each selected latent
  std::vector<double> candidate_log_q;  ///< all num_z scores in draw order
};

/// Draws num_z prior latents (candidate i from substream i), scores each by
/// the aggregate posterior of `data` and decodes the n lowest. Ties go to the
/// lower candidate index.
LowPosteriorResult low_posterior_samples(const models::ModelBundle& bundle, const Tensor& data, std::size_t num_z,
                                         std::size_t n, const RngStream& rng, DecodeMode mode = DecodeMode::kMean);

// ---------------------------------------------------------------- histograms

struct HistogramReport {
  std::string tag;  ///< data | low_posterior | nearest_neighbor, or any caller label
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  std::vector<double> kde_x;
  std::vector<double> kde_y;
  double bandwidth = 0.0;
  double mean = 0.0;

  std::size_t total() const;
  std::string to_csv() const;
};

/// Silverman's rule: 0.9 min(sd, IQR / 1.34) n^(-1/5). Zero spread gives 0.
double silverman_bandwidth(std::vector<double> values);

/// Fixed-range histogram; values outside [lo, hi] land in the end bins.
HistogramReport histogram(std::span<const double> values, std::size_t bins, double lo, double hi, std::string tag,
                          std::size_t kde_points = 128);

/// Per-example ELBO of each population, binned on one shared range.
std::vector<HistogramReport> elbo_histogram(const models::ModelBundle& bundle,
                                            const std::vector<std::pair<std::string, Tensor>>& populations,
                                            std::size_t bins, std::size_t mc_samples, const RngStream& rng);

/// Index of the l2-nearest row of `data` for each row of `queries`; ties go to the lower index.
std::vector<std::size_t> nearest_neighbors(const Tensor& queries, const Tensor& data);

// ---------------------------------------------------------------- posterior KL table

struct PosteriorKlStats {
  std::vector<double> per_dim;      ///< mean over examples of KL per latent unit
  std::vector<double> per_example;  ///< total KL per example
  std::vector<double> floor_fraction;  ///< per unit, share of examples whose log-variance sits at the floor

  /// Share of latent units with mean KL below `threshold` nats.
  double sparsity(double threshold = 0.01) const;
  /// Share of latent units at the variance floor for more than half of the examples.
  double floor_hit(double share = 0.5) const;
  HistogramReport example_histogram(std::size_t bins) const;
};

PosteriorKlStats posterior_kl_stats(const models::ModelBundle& bundle, const Tensor& data);

// ---------------------------------------------------------------- SSIM and diversity

struct SsimConfig {
  std::size_t window = 7;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Single-scale SSIM of two images of shape [h, w], valid-region Gaussian window.
double ssim(const Tensor& a, const Tensor& b, const SsimConfig& config = {});

/// Mean over distinct pairs of 1 - SSIM. `images` is n x (h*w) or n x h x w.
double diversity(const Tensor& images, const Shape& item_shape, const SsimConfig& config = {});

}  // namespace dmvi::diag
