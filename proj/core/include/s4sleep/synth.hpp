#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "s4sleep/dataset.hpp"

namespace s4sleep {

struct SynthConfig {
  std::size_t n_records = 20;
  std::size_t epochs_per_record = 120;
  double sampling_rate = 20.0;
  double correlation_length = 3.0;  // mean dwell time in epochs, >= 1
  std::uint64_t seed = 0;
  double amplitude = 1.0;
  double noise_std = 0.5;
  double frequency_jitter = 0.03;  // relative, drawn per epoch

  bool operator==(const SynthConfig&) const = default;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

// Dominant oscillation frequency of a stage, proportional to the sampling
// rate (10/6/13/1.5/4 Hz for W/N1/N2/N3/REM at 100 Hz).
double stage_frequency_hz(StageLabel stage, double sampling_rate);

// Markov chain over the five stages: stay with 1 - 1/correlation_length,
// otherwise jump uniformly to one of the other four.
double transition_probability(StageLabel from, StageLabel to, double correlation_length);

// Seeded synthetic records; record i depends only on (seed, i).
std::vector<LabeledRecord> synth_generate(const SynthConfig& config);

}  // namespace s4sleep
