#include <benchmark/benchmark.h>

#include "blocknas/network.hpp"

using namespace blocknas;

namespace {

MacroConfig desk_macro() {
  MacroConfig m;
  m.stages = 2;
  m.repeats = 1;
  m.initial_filters = 16;
  m.height = 16;
  m.width = 16;
  m.num_classes = 4;
  return m;
}

void BM_TrainStep(benchmark::State& state) {
  Network<float> net(build_architecture(parse_config("conv(5)|sp_conv(1)|sp_conv(3)|rc_conv(3)+add"), desk_macro()), 1);
  Tensor<float> x({32, 16, 16, 3}, 0.5f);
  std::vector<int> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 4);
  for (auto _ : state) {
    net.forward(x, Mode::train);
    net.store().zero_grad();
    benchmark::DoNotOptimize(net.backward(labels));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep);

void BM_PredictDefaultMacro(benchmark::State& state) {
  const Network<float> net(build_architecture(parse_config("conv(5)|sp_conv(1)|sp_conv(3)|rc_conv(3)+add"), MacroConfig{}), 1);
  const Tensor<float> x({1, 32, 32, 3}, 0.5f);
  for (auto _ : state) benchmark::DoNotOptimize(net.predict(x));
}
BENCHMARK(BM_PredictDefaultMacro)->Unit(benchmark::kMillisecond);

void BM_BuildAndCount(benchmark::State& state) {
  const BlockConfig c = parse_config("conv(1)|rc_conv(3)|conv(5)|rc_conv(1)+concat");
  for (auto _ : state) benchmark::DoNotOptimize(count_params(build_architecture(c, MacroConfig{})));
}
BENCHMARK(BM_BuildAndCount);

}  // namespace
