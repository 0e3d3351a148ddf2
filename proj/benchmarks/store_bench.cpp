#include <string>
#include <vector>

#include <benchmark/benchmark.h>
#include <nlohmann/json.hpp>

#include "alignreplay/store.hpp"

namespace store = alignreplay::store;

static void BM_SerializeRecords(benchmark::State& state) {
  std::vector<nlohmann::json> lines;
  for (int i = 0; i < state.range(0); ++i) {
    lines.push_back({{"schema", "query.v1"}, {"id", "q-" + std::to_string(i)}, {"query_text", "how to do it?"}});
  }
  for (auto _ : state) benchmark::DoNotOptimize(store::serialize_records(lines));
}
BENCHMARK(BM_SerializeRecords)->Arg(10000);

static void BM_DigestBytes(benchmark::State& state) {
  const std::string data(static_cast<std::size_t>(state.range(0)), 'x');
  for (auto _ : state) benchmark::DoNotOptimize(store::digest_bytes(data));
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DigestBytes)->Arg(1 << 20);
