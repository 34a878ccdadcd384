#include <benchmark/benchmark.h>

#include "gestinv/corpus.hpp"
#include "gestinv/denoiser.hpp"
#include "gestinv/optimizer.hpp"
#include "gestinv/sampler.hpp"

using namespace gestinv;

namespace {

// Untrained weights: timing does not depend on their values.
struct Setup {
  DenoiserParams params = DenoiserParams::init({}, 1);
  VarianceSchedule full = VarianceSchedule::default_schedule();
  Denoiser eps = bind_denoiser(params, synth_corpus(7, 1, 60).clips[0].condition);
  ad::Tensor x_T = gaussian({60, 16, 3}, 2);
  LossFn loss = make_edit_loss({EditSpec{}}, Skeleton::default_skeleton());
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_Denoise(benchmark::State& state) {
  const auto& s = setup();
  for (auto _ : state) benchmark::DoNotOptimize(s.eps(s.x_T, 500));
}

void BM_CoupledStep(benchmark::State& state) {
  const auto& s = setup();
  const auto sched = respace(s.full, 50, RespaceOrigin::kFirstStride);
  const CoupledState st{s.x_T, s.x_T, 50};
  for (auto _ : state) benchmark::DoNotOptimize(step_coupled(st, s.eps, sched, {}));
}

void BM_Generate(benchmark::State& state) {
  const auto& s = setup();
  const auto sched = respace(s.full, static_cast<int>(state.range(0)), RespaceOrigin::kFirstStride);
  for (auto _ : state) benchmark::DoNotOptimize(generate(s.x_T, s.eps, sched, {}));
}

void BM_Invert(benchmark::State& state) {
  const auto& s = setup();
  const auto sched = respace(s.full, static_cast<int>(state.range(0)), RespaceOrigin::kFirstStride);
  const auto g = generate(s.x_T, s.eps, sched, {});
  for (auto _ : state) benchmark::DoNotOptimize(invert(g.x0, g.y0, s.eps, sched, {}, g.ledger));
}

void BM_GradFullCache(benchmark::State& state) {
  const auto& s = setup();
  const auto sched = respace(s.full, static_cast<int>(state.range(0)), RespaceOrigin::kFirstStride);
  for (auto _ : state) {
    benchmark::DoNotOptimize(grad_full_cache(s.x_T, s.x_T, s.eps, sched, {}, s.loss));
  }
}

void BM_GradInversionRecompute(benchmark::State& state) {
  const auto& s = setup();
  const auto sched = respace(s.full, static_cast<int>(state.range(0)), RespaceOrigin::kFirstStride);
  for (auto _ : state) {
    benchmark::DoNotOptimize(grad_inversion_recompute(s.x_T, s.x_T, s.eps, sched, {}, s.loss));
  }
}

}  // namespace

BENCHMARK(BM_Denoise)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_CoupledStep)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Generate)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Invert)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradFullCache)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradInversionRecompute)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
