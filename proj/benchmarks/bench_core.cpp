#include <benchmark/benchmark.h>

#include "dmvi/autodiff.hpp"
#include "dmvi/diagnostics.hpp"
#include "dmvi/estimators.hpp"
#include "dmvi/nn.hpp"
#include "dmvi/rng.hpp"

using namespace dmvi;

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  RngStream rng(1);
  const Tensor a = rng.normal_tensor({n, n}), b = rng.normal_tensor({n, n});
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

// Forward and backward through the default 2 x 256 encoder on a batch of 64 sprites.
static void BM_MlpBackward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  RngStream rng(2);
  Mlp net({144, width, width, 32}, Activation::kLeakyRelu, Activation::kIdentity, rng);
  const Tensor x = rng.normal_tensor({64, 144});
  for (auto _ : state) {
    ad::Tape tape;
    const auto b = net.bind(tape, true);
    const ad::Var loss = ad::mean(ad::square(net.forward(b, tape.constant(x))));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(b.vars.front()).data().data());
  }
}
BENCHMARK(BM_MlpBackward)->Arg(64)->Arg(256);

// One aggregate-posterior evaluation against N posteriors of 16 latents.
static void BM_MarginalLogQ(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  RngStream rng(3);
  const est::PosteriorTable table({rng.normal_tensor({n, 16}), rng.uniform_tensor({n, 16}, -3.0, 0.0)});
  const Tensor z = rng.normal_tensor({1, 16});
  for (auto _ : state) benchmark::DoNotOptimize(table.marginal_log_q(z.row_span(0)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_MarginalLogQ)->Arg(1024)->Arg(60000);

static void BM_Ssim(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  RngStream rng(4);
  const Tensor a = rng.uniform_tensor({side, side}), b = rng.uniform_tensor({side, side});
  for (auto _ : state) benchmark::DoNotOptimize(diag::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(12)->Arg(32);

BENCHMARK_MAIN();
