#include <benchmark/benchmark.h>

#include "s4sleep/ssm.hpp"

using namespace s4sleep;

namespace {

struct Layer {
  ssm::S4LayerParams params;
  std::vector<double> u;
  std::size_t length;
};

Layer make(std::size_t channels, std::size_t states, std::size_t length) {
  Rng rng(1);
  Layer l{ssm::S4LayerParams::initialize(channels, states, rng), std::vector<double>(channels * length), length};
  for (auto& x : l.u) x = rng.normal();
  return l;
}

void BM_Fft(benchmark::State& state) {
  const auto l = make(16, 64, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ssm::apply_fft(l.params, l.u, l.length));
  state.SetItemsProcessed(state.iterations() * state.range(0) * 16);
}

void BM_Recurrence(benchmark::State& state) {
  const auto l = make(16, 64, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ssm::apply_recurrence(l.params, l.u, l.length));
  state.SetItemsProcessed(state.iterations() * state.range(0) * 16);
}

void BM_Kernel(benchmark::State& state) {
  const auto l = make(16, 64, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ssm::materialize_kernel(l.params, l.length));
}

void BM_LayerGradients(benchmark::State& state) {
  const auto l = make(16, 64, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ssm::layer_gradients(l.params, l.u, l.u, l.length));
}

}  // namespace

BENCHMARK(BM_Fft)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_Recurrence)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_Kernel)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_LayerGradients)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK_MAIN();
