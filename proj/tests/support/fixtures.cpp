#include "fixtures.hpp"

#include <cmath>

namespace s4sleep::fixtures {
namespace {

// Values with a short exact decimal form, so header fields round-trip.
double random_physical(Rng& rng) { return static_cast<double>(static_cast<int>(rng.index(200001)) - 100000) / 100.0; }

}  // namespace

std::string random_text(Rng& rng, std::size_t max_len, bool allow_empty) {
  const std::size_t len = allow_empty ? rng.index(max_len + 1) : 1 + rng.index(max_len);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<char>(0x20 + rng.index(0x7F - 0x20)));
  while (!s.empty() && s.back() == ' ') s.back() = 'x';
  return s;
}

edf::EdfContents random_edf(Rng& rng) {
  edf::EdfContents c;
  const bool plus = rng.uniform() < 0.6;
  const std::size_t ordinary = 1 + rng.index(5);
  const double durations[] = {1.0, 0.5, 2.5, 30.0};

  auto& h = c.header;
  h.patient_id = random_text(rng, 80);
  h.recording_id = random_text(rng, 80);
  h.start = edf::DateTime{static_cast<int>(1 + rng.index(28)), static_cast<int>(1 + rng.index(12)),
                          static_cast<int>(1985 + rng.index(100)), static_cast<int>(rng.index(24)),
                          static_cast<int>(rng.index(60)), static_cast<int>(rng.index(60))};
  h.n_data_records = static_cast<std::int64_t>(rng.index(7));
  h.record_duration_s = durations[rng.index(4)];
  h.n_signals = static_cast<std::int64_t>(ordinary + (plus ? 1 : 0));
  h.header_bytes = 256 * (h.n_signals + 1);
  h.reserved = plus ? "EDF+C" : "";

  for (std::size_t s = 0; s < ordinary; ++s) {
    edf::SignalSpec spec;
    do {
      spec.label = random_text(rng, 16, false);
    } while (spec.label == edf::kAnnotationLabel);
    spec.transducer = random_text(rng, 80);
    spec.physical_dimension = random_text(rng, 8);
    spec.physical_min = random_physical(rng);
    do {
      spec.physical_max = random_physical(rng);
    } while (spec.physical_max == spec.physical_min);
    const int a = static_cast<int>(rng.index(65536)) - 32768;
    int b = static_cast<int>(rng.index(65536)) - 32768;
    while (b == a) b = static_cast<int>(rng.index(65536)) - 32768;
    spec.digital_min = std::min(a, b);
    spec.digital_max = std::max(a, b);
    spec.prefiltering = random_text(rng, 80);
    spec.samples_per_record = static_cast<std::int64_t>(1 + rng.index(40));
    spec.reserved = rng.uniform() < 0.5 ? "" : random_text(rng, 32);
    std::vector<std::int16_t> samples(static_cast<std::size_t>(spec.samples_per_record * h.n_data_records));
    const auto span = static_cast<std::size_t>(spec.digital_max - spec.digital_min + 1);
    for (auto& v : samples) v = static_cast<std::int16_t>(spec.digital_min + static_cast<int>(rng.index(span)));
    c.signals.push_back(spec);
    c.samples.push_back(std::move(samples));
  }

  if (plus) {
    const std::size_t count = h.n_data_records > 0 ? rng.index(11) : 0;
    double onset = -static_cast<double>(rng.index(40)) / 4.0;
    for (std::size_t i = 0; i < count; ++i) {
      onset += static_cast<double>(rng.index(400)) / 4.0;
      edf::Annotation a;
      a.onset_s = onset;
      if (rng.uniform() < 0.7) a.duration_s = static_cast<double>(rng.index(1000)) / 8.0;
      a.text = random_text(rng, 24, false);
      if (rng.uniform() < 0.2) a.text += "\xC3\xA9";  // UTF-8 e-acute
      c.annotations.push_back(std::move(a));
    }
    edf::SignalSpec annot;
    annot.label = std::string(edf::kAnnotationLabel);
    annot.samples_per_record = edf::annotation_samples_needed(c.annotations, h.n_data_records, h.record_duration_s) +
                               static_cast<std::int64_t>(rng.index(4));
    c.signals.push_back(annot);
    c.samples.emplace_back();
  }
  return c;
}

LabeledRecord random_record(Rng& rng, std::string id, std::size_t epochs, double sampling_rate) {
  const std::size_t spe = samples_per_epoch_for_rate(sampling_rate);
  std::vector<double> samples(epochs * spe);
  for (auto& v : samples) v = rng.normal();
  std::vector<StageLabel> labels(epochs);
  for (auto& l : labels) l = stage_from_class(rng.index(kNumStages));
  return make_labeled_record(std::move(id), std::move(samples), sampling_rate, std::move(labels));
}

ModelConfig tiny_model(std::size_t dim, std::size_t states, std::size_t layers, std::uint64_t seed) {
  ModelConfig c;
  c.model_dim = dim;
  c.states_per_channel = states;
  c.encoder_s4_layers = layers;
  c.predictor_s4_layers = layers;
  c.conv1 = ConvSpec{dim, 5, 0};
  c.conv2 = ConvSpec{0, 3, 0};
  c.dropout = 0.0;
  c.init_seed = seed;
  return c;
}

}  // namespace s4sleep::fixtures
