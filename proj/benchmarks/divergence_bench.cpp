#include <random>

#include <benchmark/benchmark.h>

#include "alignreplay/divergence.hpp"

namespace dv = alignreplay::divergence;

static void BM_DecomposeJointKl(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const auto a = dv::random_model(rng, n, n);
  const auto b = dv::random_model(rng, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(dv::decompose_joint_kl(a, b));
}
BENCHMARK(BM_DecomposeJointKl)->Arg(2)->Arg(8)->Arg(64);

static void BM_IdentitySuite(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(dv::check_decomposition_identity(1000, 7));
}
BENCHMARK(BM_IdentitySuite)->Unit(benchmark::kMillisecond);

static void BM_PinskerSuite(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(dv::check_pinsker(1000, 7));
}
BENCHMARK(BM_PinskerSuite)->Unit(benchmark::kMillisecond);
