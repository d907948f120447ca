#include <benchmark/benchmark.h>

#include "s4sleep/evaluation.hpp"

using namespace s4sleep;

namespace {

PredictionSet make_set(std::size_t records, std::size_t epochs) {
  Rng rng(3);
  PredictionSet set;
  for (std::size_t r = 0; r < records; ++r) {
    RecordPrediction p;
    p.record_id = "R" + std::to_string(r);
    for (std::size_t e = 0; e < epochs; ++e) {
      const auto l = stage_from_class(rng.index(5));
      const auto q = rng.uniform() < 0.8 ? l : stage_from_class(rng.index(5));
      p.labels.push_back(l);
      p.predicted.push_back(q);
      Probs pr{};
      pr[class_index(q)] = 1.0;
      p.probs.push_back(pr);
    }
    set.records.push_back(std::move(p));
  }
  return set;
}

void BM_BootstrapRecords(benchmark::State& state) {
  const auto set = make_set(static_cast<std::size_t>(state.range(0)), 1000);
  for (auto _ : state) benchmark::DoNotOptimize(bootstrap_ci(set));
}

void BM_BootstrapEpochs(benchmark::State& state) {
  const auto set = make_set(static_cast<std::size_t>(state.range(0)), 1000);
  BootstrapOptions o;
  o.unit = ResampleUnit::Epoch;
  for (auto _ : state) benchmark::DoNotOptimize(bootstrap_ci(set, o));
}

void BM_Compare(benchmark::State& state) {
  const auto a = make_set(static_cast<std::size_t>(state.range(0)), 1000);
  for (auto _ : state) benchmark::DoNotOptimize(compare_models(a, a));
}

}  // namespace

BENCHMARK(BM_BootstrapRecords)->Arg(20)->Arg(200)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BootstrapEpochs)->Arg(20)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Compare)->Arg(20)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
