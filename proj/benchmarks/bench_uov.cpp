#include <benchmark/benchmark.h>

#include "dsekit/rng.hpp"
#include "dsekit/uov.hpp"

namespace {

void BM_encode_decode(benchmark::State& state) {
  const dsekit::BucketSpec spec = dsekit::make_buckets(2, 128, 16);
  dsekit::SplitMix64 rng(3);
  for (auto _ : state) {
    const double d = rng.next_double(2.0, 128.0);
    benchmark::DoNotOptimize(dsekit::decode(dsekit::encode(d, spec), spec));
  }
}
BENCHMARK(BM_encode_decode);

}  // namespace
