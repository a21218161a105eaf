#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmvi/distributions.hpp"
#include "dmvi/estimators.hpp"
#include "dmvi/metrics.hpp"

namespace dmvi::synth {

/// Target and learner are both x = W^T z + b, z ~ N(0, I_k), with d = max(1, k / 10).
struct SyntheticTask {
  std::size_t k = 0;
  std::size_t d = 0;
  dist::AffineGaussian target;
  dist::AffineGaussian learner;
  std::uint64_t seed = 0;
};

/// W entries ~ N(0, 1/k) (standard deviation 1/sqrt(k)), b ~ N(0, 1); W is
/// redrawn until W^T W is positive definite.
SyntheticTask make_task(std::size_t k, std::uint64_t seed);

/// KL(learner || target) in closed form.
double true_kl(const SyntheticTask& task);
/// Same quantity by Monte Carlo over learner samples.
est::EstimateReport mc_true_kl(const SyntheticTask& task, std::size_t samples, const RngStream& rng);

/// Classifier shape used on this task: max(64, 4d) wide.
est::RatioClassifierConfig classifier_for(const SyntheticTask& task);

struct EstimationResult {
  double true_kl = 0.0;
  est::EstimateReport estimate;
};

/// Ratio-trick estimate of KL(learner || target) from `samples` draws per side.
EstimationResult run_estimation(const SyntheticTask& task, const est::RatioClassifierConfig& classifier,
                                std::size_t samples, const RngStream& rng);

struct MinimizeConfig {
  std::size_t iterations = 20000;
  double lr_learner = 1e-3;
  double lr_disc = 1e-4;
  /// Discriminator updates per learner update.
  std::size_t disc_steps = 1;
  std::size_t batch = 256;
  std::size_t log_interval = 100;
  std::size_t eval_batch = 1024;
  /// Stop at the first logged step with true KL <= stop_ratio * initial; 0 disables.
  double stop_ratio = 0.0;
};

struct TrajectoryPoint {
  std::size_t step;
  double true_kl;
  double est_kl;
};

struct MinimizeResult {
  std::vector<TrajectoryPoint> trajectory;
  double initial_kl = 0.0;
  /// "ok" or "diverged"
  std::string status = "ok";
  SyntheticTask task;  ///< learner at the end of the run

  double final_kl() const { return trajectory.empty() ? initial_kl : trajectory.back().true_kl; }
  ExperimentLog to_log() const;
};

/// Alternates discriminator and learner updates; the learner follows the
/// reverse-KL generator loss. Stops early with status "diverged" once the
/// true KL exceeds 10x its initial value or stops being finite.
MinimizeResult run_minimization(const SyntheticTask& task, const MinimizeConfig& config);

/// step,true_kl,est_kl,status
std::string trajectory_csv(const MinimizeResult& result);
void write_trajectory_csv(const MinimizeResult& result, const std::filesystem::path& path);

}  // namespace dmvi::synth
