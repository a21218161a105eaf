#include "dmvi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "dmvi/errors.hpp"
#include "dmvi/models.hpp"
#include "dmvi/nn.hpp"

namespace dmvi::synth {

namespace {

dist::AffineGaussian draw_affine(std::size_t k, std::size_t d, const RngStream& root) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    RngStream rng = root.substream(attempt);
    dist::AffineGaussian g{rng.normal_tensor({k, d}, 0.0, 1.0 / std::sqrt(static_cast<double>(k))),
                           rng.normal_tensor({d})};
    if (!dist::affine_to_moments(g).degenerate) return g;
    if (attempt > 1000) throw NumericError("make_task: could not draw a full-rank W");
  }
}

std::size_t disc_width(std::size_t d) { return std::max<std::size_t>(64, 4 * d); }

// Learner pushforward of fixed z as a graph; W and b are leaves.
ad::Var push_forward(ad::Tape& tape, ad::Var w, ad::Var b, const Tensor& z) {
  return ad::add(ad::matmul(tape.constant(z), w), b);
}

}  // namespace

SyntheticTask make_task(std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ContractError("make_task: k must be at least 1");
  SyntheticTask t;
  t.k = k;
  t.d = std::max<std::size_t>(1, k / 10);
  t.seed = seed;
  const RngStream root = RngStream(seed).substream(0x5e7a);
  t.target = draw_affine(k, t.d, root.substream(0));
  t.learner = draw_affine(k, t.d, root.substream(1));
  return t;
}

double true_kl(const SyntheticTask& task) {
  return dist::kl_full_gauss(dist::affine_to_moments(task.learner), dist::affine_to_moments(task.target));
}

est::EstimateReport mc_true_kl(const SyntheticTask& task, std::size_t samples, const RngStream& rng) {
  if (samples < 2) throw ContractError("mc_true_kl: need at least two samples");
  RngStream r = rng;
  const Tensor x = dist::affine_sample(task.learner, r, samples);
  const auto lq = dist::full_gauss_log_prob(dist::affine_to_moments(task.learner), x);
  const auto lp = dist::full_gauss_log_prob(dist::affine_to_moments(task.target), x);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double v = lq[i] - lp[i];
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(samples), mean = s / n;
  est::EstimateReport rep;
  rep.method = est::Method::kMc;
  rep.value = mean;
  rep.num_z = samples;
  rep.std_error = std::sqrt(std::max(0.0, (s2 / n - mean * mean) / (n - 1)));
  return rep;
}

est::RatioClassifierConfig classifier_for(const SyntheticTask& task) {
  est::RatioClassifierConfig c;
  c.hidden_layers = 3;
  c.width = disc_width(task.d);
  return c;
}

EstimationResult run_estimation(const SyntheticTask& task, const est::RatioClassifierConfig& classifier,
                                std::size_t samples, const RngStream& rng) {
  RngStream rq = rng.substream(0), rp = rng.substream(1);
  const Tensor xq = dist::affine_sample(task.learner, rq, samples);
  const Tensor xp = dist::affine_sample(task.target, rp, samples);
  return {true_kl(task), est::ratio_kl(xq, xp, classifier, rng.substream(2))};
}

ExperimentLog MinimizeResult::to_log() const {
  ExperimentLog log;
  for (const auto& p : trajectory) {
    log.record(p.step, "true_kl", p.true_kl);
    log.record(p.step, "est_kl", p.est_kl);
  }
  return log;
}

MinimizeResult run_minimization(const SyntheticTask& task, const MinimizeConfig& config) {
  if (config.iterations == 0) throw ContractError("run_minimization: iterations must be at least 1");
  if (config.batch == 0 || config.disc_steps == 0 || config.log_interval == 0)
    throw ContractError("run_minimization: batch, disc_steps and log_interval must be positive");
  MinimizeResult res;
  res.task = task;
  dist::AffineGaussian& learner = res.task.learner;
  const RngStream root = RngStream(task.seed).substream(0x313);

  RngStream init = root.substream(0);
  std::vector<std::size_t> widths{task.d, disc_width(task.d), disc_width(task.d), disc_width(task.d), 1};
  TrainableNet disc{Mlp(widths, Activation::kLeakyRelu, Activation::kIdentity, init), {}};
  AdamState learner_adam;

  res.initial_kl = true_kl(res.task);
  auto log_point = [&](std::size_t step) {
    double kl = std::numeric_limits<double>::quiet_NaN();
    try {
      kl = true_kl(res.task);
    } catch (const ContractError&) {
    }
    RngStream er = root.substream(1).substream(step);
    const Tensor x = dist::affine_sample(learner, er, config.eval_batch);
    const Tensor l = disc.net.evaluate(x);
    double est = 0.0;
    for (double v : l.data()) est -= std::clamp(v, -models::kLogitBound, models::kLogitBound);
    res.trajectory.push_back({step, kl, est / static_cast<double>(l.size())});
    if (!std::isfinite(kl) || kl > 10.0 * res.initial_kl) {
      res.status = "diverged";
      return false;
    }
    return !(config.stop_ratio > 0.0 && kl <= config.stop_ratio * res.initial_kl);
  };

  for (std::size_t it = 0; it < config.iterations; ++it) {
    if (it % config.log_interval == 0 && !log_point(it)) return res;
    RngStream rng = root.substream(2).substream(it);
    for (std::size_t s = 0; s < config.disc_steps; ++s) {
      const Tensor real = dist::affine_sample(task.target, rng, config.batch);
      const Tensor fake = dist::affine_sample(learner, rng, config.batch);
      ad::Tape tape;
      const BoundParams bound = disc.net.bind(tape, true);
      const ad::Var loss = ad::add(ad::mean(models::neg_log_prob(disc.net.forward(bound, tape.constant(real)))),
                                   ad::mean(models::neg_log_one_minus(disc.net.forward(bound, tape.constant(fake)))));
      tape.backward(loss);
      disc.step(bound.grads(tape), config.lr_disc);
    }
    ad::Tape tape;
    const ad::Var w = tape.leaf(learner.w), b = tape.leaf(learner.b.reshaped({1, task.d}));
    const BoundParams frozen = disc.net.bind(tape, false);
    const Tensor z = rng.normal_tensor({config.batch, task.k});
    const ad::Var loss = ad::mean(models::ratio_loss(disc.net.forward(frozen, push_forward(tape, w, b, z))));
    tape.backward(loss);
    std::vector<Tensor*> params{&learner.w, &learner.b};
    Tensor gb = tape.grad(b).reshaped({task.d});
    const std::vector<Tensor> grads{tape.grad(w), std::move(gb)};
    adam_step(params, grads, learner_adam, config.lr_learner);
  }
  log_point(config.iterations);
  return res;
}

std::string trajectory_csv(const MinimizeResult& result) {
  std::ostringstream os;
  os.precision(17);
  os << "step,true_kl,est_kl,status\n";
  for (std::size_t i = 0; i < result.trajectory.size(); ++i) {
    const auto& p = result.trajectory[i];
    const bool last = i + 1 == result.trajectory.size();
    os << p.step << ',' << p.true_kl << ',' << p.est_kl << ',' << (last ? result.status : std::string("ok")) << '\n';
  }
  return os.str();
}

void write_trajectory_csv(const MinimizeResult& result, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << trajectory_csv(result);
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace dmvi::synth
