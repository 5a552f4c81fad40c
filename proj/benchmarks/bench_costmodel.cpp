#include <benchmark/benchmark.h>

#include "dsekit/costmodel.hpp"
#include "dsekit/rng.hpp"

namespace {

void BM_latency(benchmark::State& state) {
  dsekit::SplitMix64 rng(1);
  const dsekit::DesignSpace space = dsekit::default_space();
  const dsekit::CostParams p;
  std::vector<dsekit::Workload> ws;
  for (int i = 0; i < 1024; ++i) {
    dsekit::Workload w;
    w.m = static_cast<std::int64_t>(rng.next_below(256)) + 1;
    w.n = static_cast<std::int64_t>(rng.next_below(1677)) + 1;
    w.k = static_cast<std::int64_t>(rng.next_below(1185)) + 1;
    w.dataflow = static_cast<dsekit::Dataflow>(rng.next_below(3));
    ws.push_back(w);
  }
  std::size_t i = 0;
  for (auto _ : state) {
    const dsekit::HardwareConfig cfg{64, 4096};
    benchmark::DoNotOptimize(dsekit::latency(ws[i++ & 1023], cfg, p));
  }
}
BENCHMARK(BM_latency);

void BM_tile_dim(benchmark::State& state) {
  std::int64_t buf = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(dsekit::tile_dim(buf));
    buf = buf % 524288 + 17;
  }
}
BENCHMARK(BM_tile_dim);

}  // namespace

BENCHMARK_MAIN();
