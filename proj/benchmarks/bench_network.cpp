#include <benchmark/benchmark.h>

#include "s4sleep/loss.hpp"
#include "s4sleep/network.hpp"

using namespace s4sleep;

namespace {

ModelConfig small() {
  ModelConfig c;
  c.model_dim = 32;
  c.conv1.channels = 32;
  c.states_per_channel = 16;
  c.encoder_s4_layers = 2;
  c.predictor_s4_layers = 2;
  return c;
}

std::vector<double> input(std::size_t epochs, std::size_t spe) {
  Rng rng(2);
  std::vector<double> x(epochs * spe);
  for (auto& v : x) v = rng.normal();
  return x;
}

// 100 Hz epochs
void BM_Forward(benchmark::State& state) {
  const Model model(small());
  const auto e = static_cast<std::size_t>(state.range(0));
  const auto x = input(e, 3000);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, 3000, RunMode{}));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ForwardBackward(benchmark::State& state) {
  const Model model(small());
  const auto e = static_cast<std::size_t>(state.range(0));
  const auto x = input(e, 3000);
  const std::vector<StageLabel> labels(e, StageLabel::N2);
  for (auto _ : state) {
    Model::ForwardCache cache;
    const Mat logits = model.forward(x, 3000, RunMode{true, 1, false}, &cache);
    GradientSet g(model.parameters());
    model.backward(cache, focal_loss_sum(logits, labels, 2.0).grad, g);
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_Forward)->Arg(10)->Arg(40)->Arg(200)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBackward)->Arg(10)->Arg(40)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
