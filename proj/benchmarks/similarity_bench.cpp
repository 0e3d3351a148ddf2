#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "alignreplay/kmeans.hpp"
#include "alignreplay/similarity.hpp"

namespace sim = alignreplay::similarity;

namespace {

sim::Embeddings cloud(std::size_t n, std::size_t dim, float center, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  sim::Embeddings out(n, std::vector<float>(dim));
  for (auto& v : out)
    for (auto& x : v) x = center + d(rng);
  return out;
}

}  // namespace

static void BM_KMeans(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 384, k = std::min<std::size_t>(500, n / 10);
  std::vector<float> flat;
  for (const auto& v : cloud(n, dim, 0.0f, 3)) flat.insert(flat.end(), v.begin(), v.end());
  for (auto _ : state) benchmark::DoNotOptimize(sim::kmeans(flat, dim, k, 50, 0));
}
BENCHMARK(BM_KMeans)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

static void BM_MauveScore(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto p = cloud(n / 2, 384, 0.0f, 1);
  const auto q = cloud(n / 2, 384, 0.2f, 2);
  for (auto _ : state) benchmark::DoNotOptimize(sim::mauve_score(p, q, sim::QuantizationConfig{}));
}
BENCHMARK(BM_MauveScore)->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);

static void BM_MauveFromHistograms(benchmark::State& state) {
  std::mt19937_64 rng(4);
  const auto p = alignreplay::divergence::random_distribution(rng, 500);
  const auto q = alignreplay::divergence::random_distribution(rng, 500);
  for (auto _ : state) benchmark::DoNotOptimize(sim::mauve_from_histograms(p, q, sim::QuantizationConfig{}));
}
BENCHMARK(BM_MauveFromHistograms)->Unit(benchmark::kMillisecond);
