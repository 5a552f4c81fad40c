#include <benchmark/benchmark.h>

#include "dsekit/oracle.hpp"

namespace {

void BM_solve(benchmark::State& state) {
  const dsekit::DesignSpace space = dsekit::default_space();
  const dsekit::CostParams p;
  dsekit::SplitMix64 rng(2);
  for (auto _ : state) {
    const dsekit::Workload w = dsekit::sample_workload(rng);
    benchmark::DoNotOptimize(dsekit::solve(w, space, p));
  }
}
BENCHMARK(BM_solve);

void BM_generate_1k(benchmark::State& state) {
  const dsekit::DesignSpace space = dsekit::default_space();
  const dsekit::CostParams p;
  for (auto _ : state)
    benchmark::DoNotOptimize(dsekit::generate(1000, 7, space, p, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_generate_1k)->Arg(1)->Arg(2);

}  // namespace
