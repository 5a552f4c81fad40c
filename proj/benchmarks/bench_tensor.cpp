#include <benchmark/benchmark.h>

#include "dsekit/rng.hpp"
#include "dsekit/tensor.hpp"

namespace {

dsekit::Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
  dsekit::Tensor t(std::move(shape));
  dsekit::SplitMix64 rng(seed);
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[static_cast<std::size_t>(i)] = rng.next_double(-1, 1);
  return t;
}

// The shape that dominates a training step: (batch*tokens) x d_model against
// d_model x ffn.
void BM_matmul_1024x64x256(benchmark::State& state) {
  dsekit::set_tensor_threads(static_cast<int>(state.range(0)));
  const dsekit::Tensor a = random_tensor({1024, 64}, 1);
  const dsekit::Tensor b = random_tensor({64, 256}, 2);
  dsekit::Tape tape;
  for (auto _ : state) {
    tape.reset();
    benchmark::DoNotOptimize(tape.matmul(tape.constant(a), tape.constant(b)));
  }
  state.SetItemsProcessed(state.iterations() * 1024 * 64 * 256 * 2);
}
BENCHMARK(BM_matmul_1024x64x256)->Arg(1)->Arg(2);

void BM_train_step_shape_backward(benchmark::State& state) {
  dsekit::set_tensor_threads(static_cast<int>(state.range(0)));
  const dsekit::Tensor x = random_tensor({1024, 64}, 3);
  const dsekit::Tensor w1 = random_tensor({64, 256}, 4);
  const dsekit::Tensor w2 = random_tensor({256, 64}, 5);
  dsekit::Tape tape;
  for (auto _ : state) {
    tape.reset();
    auto xv = tape.constant(x);
    auto w1v = tape.leaf(w1);
    auto w2v = tape.leaf(w2);
    auto h = tape.matmul(tape.relu(tape.matmul(xv, w1v)), w2v);
    auto loss = tape.sum_all(tape.mul(h, h));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(w1v));
  }
}
BENCHMARK(BM_train_step_shape_backward)->Arg(1)->Arg(2);

}  // namespace
