#include <cmath>
#include <string>

#include "doctest.h"
#include "dmvi/datasets.hpp"
#include "dmvi/errors.hpp"
#include "dmvi/synth.hpp"

using namespace dmvi;
using namespace dmvi::synth;

namespace {

// Estimate minus truth for ratio_kl at d = 1, tasks 1000..1009, 1e4 samples per side.
constexpr double kGapMean = -0.1633;
constexpr double kGapSd = 0.3673;

std::uint64_t affine_digest(const dist::AffineGaussian& g) {
  return data::digest(g.w) ^ (data::digest(g.b) * 0x9e3779b97f4a7c15ULL);
}

}  // namespace

TEST_CASE("make_task: dimensions") {
  CHECK(make_task(10, 0).d == 1);
  CHECK(make_task(1, 0).d == 1);
  CHECK(make_task(19, 0).d == 1);
  CHECK(make_task(100, 0).d == 10);
  const auto t = make_task(30, 4);
  CHECK(t.target.w.shape() == Shape{30, 3});
  CHECK(t.target.b.size() == 3);
  CHECK(t.learner.w.shape() == Shape{30, 3});
  CHECK_FALSE(dist::affine_to_moments(t.target).degenerate);
  CHECK_THROWS_AS(make_task(0, 0), ContractError);
}

TEST_CASE("make_task: deterministic per seed, target and learner independent") {
  const auto a = make_task(40, 7), b = make_task(40, 7), c = make_task(40, 8);
  CHECK(a.target.w == b.target.w);
  CHECK(a.learner.b == b.learner.b);
  CHECK(a.target.w != c.target.w);
  CHECK(a.target.w != a.learner.w);
}

TEST_CASE("make_task: W scale keeps the covariance O(1)") {
  // Diagonal of W^T W is a sum of k draws of variance 1/k: mean 1.
  double s = 0.0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = dist::affine_to_moments(make_task(200, seed).target);
    for (std::size_t i = 0; i < m.dim(); ++i, ++n) s += m.cov(i, i);
  }
  CHECK(std::abs(s / n - 1.0) < 0.1);
}

TEST_CASE("true_kl: zero for learner = target, matches the Gaussian formula at d = 1") {
  auto t = make_task(10, 1);
  SyntheticTask same = t;
  same.learner = same.target;
  CHECK(true_kl(same) == doctest::Approx(0.0).epsilon(1e-12));
  // d = 1: KL(N(m0, v0) || N(m1, v1)).
  const auto q = dist::affine_to_moments(t.learner), p = dist::affine_to_moments(t.target);
  const double v0 = q.cov(0, 0), v1 = p.cov(0, 0), dm = q.mean[0] - p.mean[0];
  const double expect = 0.5 * (v0 / v1 + dm * dm / v1 - 1.0 + std::log(v1 / v0));
  CHECK(true_kl(t) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("run_minimization: closed-form KL agrees with 1e5-sample MC at every logged step") {
  const auto task = make_task(10, 3);
  MinimizeConfig c;
  c.log_interval = 100;
  for (std::size_t steps : {1, 100, 200, 300}) {
    c.iterations = steps;
    const auto r = run_minimization(task, c);
    // Runs are prefixes of one another; the last point is the learner returned.
    REQUIRE(r.trajectory.back().step == steps);
    CHECK(r.trajectory.back().true_kl == true_kl(r.task));
    const auto mc = mc_true_kl(r.task, 100000, RngStream(steps));
    CHECK(std::abs(mc.value - true_kl(r.task)) <= 3 * mc.std_error);
  }
}

TEST_CASE("run_minimization: target untouched, learner moved, runs reproducible") {
  const auto task = make_task(20, 5);
  MinimizeConfig c;
  c.iterations = 150;
  c.log_interval = 50;
  const auto r = run_minimization(task, c);
  CHECK(affine_digest(r.task.target) == affine_digest(task.target));
  CHECK(affine_digest(r.task.learner) != affine_digest(task.learner));
  CHECK(r.trajectory.size() == 4);
  CHECK(r.initial_kl == r.trajectory.front().true_kl);
  CHECK(trajectory_csv(r) == trajectory_csv(run_minimization(task, c)));
  c.disc_steps = 5;
  const auto r5 = run_minimization(task, c);
  CHECK(trajectory_csv(r5) != trajectory_csv(r));
  CHECK(trajectory_csv(r5) == trajectory_csv(run_minimization(task, c)));
}

TEST_CASE("run_minimization: divergence ends the run") {
  const auto task = make_task(10, 6);
  MinimizeConfig c;
  c.iterations = 2000;
  c.log_interval = 10;
  c.lr_learner = 5.0;
  const auto r = run_minimization(task, c);
  CHECK(r.status == "diverged");
  CHECK(r.trajectory.back().step < 2000);
  const double last = r.trajectory.back().true_kl;
  CHECK((!std::isfinite(last) || last > 10 * r.initial_kl));
  const std::string csv = trajectory_csv(r);
  CHECK(csv.rfind(",diverged\n") == csv.size() - std::string(",diverged\n").size());
}

TEST_CASE("run_minimization: stop_ratio and argument checks") {
  const auto task = make_task(10, 0);
  MinimizeConfig c;
  c.stop_ratio = 0.5;
  c.log_interval = 50;
  const auto r = run_minimization(task, c);
  CHECK(r.status == "ok");
  CHECK(r.final_kl() <= 0.5 * r.initial_kl);
  CHECK(r.trajectory.back().step < c.iterations);
  c.iterations = 0;
  CHECK_THROWS_AS(run_minimization(task, c), ContractError);
}

TEST_CASE("trajectory_csv: header and columns") {
  MinimizeResult r;
  r.trajectory = {{0, 1.5, 0.25}, {100, 0.5, 0.125}};
  CHECK(trajectory_csv(r) == "step,true_kl,est_kl,status\n0,1.5,0.25,ok\n100,0.5,0.125,ok\n");
  const auto log = r.to_log();
  CHECK(log.series("true_kl") == std::vector<double>{1.5, 0.5});
}

TEST_CASE("classifier_for: width max(64, 4d)") {
  CHECK(classifier_for(make_task(10, 0)).width == 64);
  CHECK(classifier_for(make_task(1000, 0)).width == 400);
  CHECK(classifier_for(make_task(10, 0)).hidden_layers == 3);
}

TEST_CASE("property: run_estimation on identical and d = 1 tasks" * doctest::test_suite("property")) {
  auto same = make_task(10, 2000);
  same.learner = same.target;
  const auto r0 = run_estimation(same, classifier_for(same), 10000, RngStream(42));
  CHECK(r0.true_kl == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(r0.estimate.value) <= 0.05);
  for (std::uint64_t seed : {2001, 2002}) {
    const auto t = make_task(10, seed);
    const auto r = run_estimation(t, classifier_for(t), 10000, RngStream(seed + 1000));
    const double gap = r.estimate.value - r.true_kl;
    MESSAGE("task " << seed << " truth " << r.true_kl << " estimate " << r.estimate.value);
    CHECK(std::abs(gap - kGapMean) <= 3 * kGapSd);
  }
}
