#include <benchmark/benchmark.h>

#include "blocknas/ops.hpp"

using namespace blocknas;

namespace {

Tensor<float> filled(Extents shape, std::uint64_t seed) {
  Tensor<float> t(std::move(shape));
  Random rng(seed);
  for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

void BM_Conv2d(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const Tensor<float> x = filled({8, 32, 32, 16}, 1), w = filled({k, k, 16, 16}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, 1));
  state.SetItemsProcessed(state.iterations() * 8 * 32 * 32 * 16 * 16 * static_cast<std::int64_t>(k * k));
}
BENCHMARK(BM_Conv2d)->Arg(1)->Arg(3)->Arg(5);

void BM_Conv2dBackward(benchmark::State& state) {
  const Tensor<float> x = filled({8, 32, 32, 16}, 1), w = filled({3, 3, 16, 16}, 2);
  const Tensor<float> dy = filled({8, 32, 32, 16}, 3);
  for (auto _ : state) {
    Tensor<float> dx(x.shape()), dw(w.shape());
    ops::conv2d_backward(x, w, 1, dy, &dx, &dw);
    benchmark::DoNotOptimize(dw.data());
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_Depthwise(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const Tensor<float> x = filled({8, 32, 32, 16}, 1), w = filled({k, k, 16}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ops::depthwise_conv(x, w, 1));
}
BENCHMARK(BM_Depthwise)->Arg(3)->Arg(5);

void BM_BatchNormTrain(benchmark::State& state) {
  const Tensor<float> x = filled({32, 32, 32, 64}, 1);
  const Tensor<float> g({64}, 1.0f), b({64}, 0.0f);
  for (auto _ : state) {
    ops::BatchNormCache<float> cache;
    benchmark::DoNotOptimize(ops::batch_norm_train(x, g, b, cache));
  }
}
BENCHMARK(BM_BatchNormTrain);

}  // namespace
