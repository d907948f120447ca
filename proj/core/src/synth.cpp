#include "s4sleep/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "s4sleep/random.hpp"

namespace s4sleep {
namespace {

constexpr double kFrequencyFraction[kNumStages] = {0.10, 0.06, 0.13, 0.015, 0.04};

StageLabel next_stage(Rng& rng, StageLabel current, double correlation_length) {
  if (rng.uniform() >= 1.0 / correlation_length) return current;
  const std::size_t jump = 1 + rng.index(kNumStages - 1);
  return stage_from_class((class_index(current) + jump) % kNumStages);
}

}  // namespace

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"n_records", c.n_records},
                     {"epochs_per_record", c.epochs_per_record},
                     {"sampling_rate", c.sampling_rate},
                     {"correlation_length", c.correlation_length},
                     {"seed", c.seed},
                     {"amplitude", c.amplitude},
                     {"noise_std", c.noise_std},
                     {"frequency_jitter", c.frequency_jitter}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  if (j.contains("n_records")) j.at("n_records").get_to(c.n_records);
  if (j.contains("epochs_per_record")) j.at("epochs_per_record").get_to(c.epochs_per_record);
  if (j.contains("sampling_rate")) j.at("sampling_rate").get_to(c.sampling_rate);
  if (j.contains("correlation_length")) j.at("correlation_length").get_to(c.correlation_length);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("amplitude")) j.at("amplitude").get_to(c.amplitude);
  if (j.contains("noise_std")) j.at("noise_std").get_to(c.noise_std);
  if (j.contains("frequency_jitter")) j.at("frequency_jitter").get_to(c.frequency_jitter);
}

double stage_frequency_hz(StageLabel stage, double sampling_rate) {
  if (!is_scoreable(stage)) throw std::invalid_argument("EXCLUDED has no characteristic frequency");
  return kFrequencyFraction[class_index(stage)] * sampling_rate;
}

double transition_probability(StageLabel from, StageLabel to, double correlation_length) {
  const double leave = 1.0 / correlation_length;
  return from == to ? 1.0 - leave : leave / static_cast<double>(kNumStages - 1);
}

std::vector<LabeledRecord> synth_generate(const SynthConfig& config) {
  if (config.n_records == 0 || config.epochs_per_record == 0) {
    throw std::invalid_argument("synthetic data needs at least one record and one epoch");
  }
  if (!(config.correlation_length >= 1.0)) throw std::invalid_argument("correlation_length must be >= 1");
  const std::size_t spe = samples_per_epoch_for_rate(config.sampling_rate);

  std::vector<LabeledRecord> out;
  out.reserve(config.n_records);
  for (std::size_t r = 0; r < config.n_records; ++r) {
    Rng rng(derive_seed(config.seed, r));
    std::vector<StageLabel> labels(config.epochs_per_record);
    labels[0] = stage_from_class(rng.index(kNumStages));
    for (std::size_t e = 1; e < labels.size(); ++e) labels[e] = next_stage(rng, labels[e - 1], config.correlation_length);

    std::vector<double> samples(config.epochs_per_record * spe);
    for (std::size_t e = 0; e < labels.size(); ++e) {
      const double f = stage_frequency_hz(labels[e], config.sampling_rate) *
                       (1.0 + config.frequency_jitter * rng.uniform(-1.0, 1.0));
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double step = 2.0 * std::numbers::pi * f / config.sampling_rate;
      for (std::size_t k = 0; k < spe; ++k) {
        double v = config.amplitude * std::sin(phase + step * static_cast<double>(k));
        if (config.noise_std > 0.0) v += config.noise_std * rng.normal();
        samples[e * spe + k] = v;
      }
    }
    char id[32];
    std::snprintf(id, sizeof(id), "SYN%04zu", r);
    out.push_back(make_labeled_record(id, std::move(samples), config.sampling_rate, std::move(labels)));
  }
  return out;
}

}  // namespace s4sleep
