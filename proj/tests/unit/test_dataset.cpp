#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "s4sleep/dataset.hpp"
#include "s4sleep/synth.hpp"

using namespace s4sleep;

namespace {

// EDF+C with one EEG channel at `rate` Hz lasting `seconds`, in 5 s records.
edf::EdfContents psg(double seconds, double rate, edf::AnnotationList stages) {
  edf::EdfContents c;
  c.header.reserved = "EDF+C";
  c.header.record_duration_s = 5.0;
  c.header.n_data_records = static_cast<std::int64_t>(seconds / 5.0);
  c.header.n_signals = 2;
  c.header.header_bytes = 768;
  edf::SignalSpec eeg;
  eeg.label = "EEG Fpz-Cz";
  eeg.samples_per_record = static_cast<std::int64_t>(rate * 5.0);
  c.signals.push_back(eeg);
  std::vector<std::int16_t> s(static_cast<std::size_t>(eeg.samples_per_record * c.header.n_data_records));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<std::int16_t>(i % 1000);
  c.samples.push_back(std::move(s));
  c.annotations = std::move(stages);
  edf::SignalSpec annot;
  annot.label = std::string(edf::kAnnotationLabel);
  annot.samples_per_record =
      edf::annotation_samples_needed(c.annotations, c.header.n_data_records, c.header.record_duration_s);
  c.signals.push_back(annot);
  c.samples.emplace_back();
  return c;
}

edf::Annotation stage(double onset, double duration, std::string text) {
  return edf::Annotation{onset, duration, std::move(text)};
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back("R" + std::to_string(i));
  return v;
}

LabeledRecord blank_record(std::size_t epochs, double rate = 1.0) {
  const auto spe = samples_per_epoch_for_rate(rate);
  std::vector<double> samples(epochs * spe);
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = static_cast<double>(i + 1);
  return make_labeled_record("R", std::move(samples), rate, std::vector<StageLabel>(epochs, StageLabel::N2));
}

}  // namespace

TEST_CASE("annotation text maps to the five stage scheme") {
  CHECK(map_annotation_to_stage("Sleep stage W") == StageLabel::W);
  CHECK(map_annotation_to_stage("Sleep stage 1") == StageLabel::N1);
  CHECK(map_annotation_to_stage("Sleep stage 2") == StageLabel::N2);
  CHECK(map_annotation_to_stage("Sleep stage 3") == StageLabel::N3);
  CHECK(map_annotation_to_stage("Sleep stage 4") == StageLabel::N3);
  CHECK(map_annotation_to_stage("Sleep stage R") == StageLabel::REM);
  CHECK(map_annotation_to_stage("Movement time") == StageLabel::Excluded);
  CHECK(map_annotation_to_stage("Sleep stage ?") == StageLabel::Excluded);
  CHECK(map_annotation_to_stage("Lights off") == StageLabel::Excluded);
  CHECK(map_annotation_to_stage("") == StageLabel::Excluded);
}

TEST_CASE("stage names round trip") {
  for (std::size_t k = 0; k < kNumStages; ++k) {
    const auto s = stage_from_class(k);
    CHECK(class_index(s) == k);
    CHECK(parse_stage_name(stage_name(s)) == s);
  }
  CHECK(parse_stage_name(stage_name(StageLabel::Excluded)) == StageLabel::Excluded);
}

TEST_CASE("align_epochs expands annotations into 30 s epochs") {
  SUBCASE("duration 60 covers two epochs") {
    const auto rec = edf::EdfRecording::from_contents(
        psg(90, 100, {stage(0, 60, "Sleep stage W"), stage(60, 30, "Sleep stage 2")}));
    const auto r = align_epochs(rec, "EEG Fpz-Cz");
    CHECK(r.labels == std::vector<StageLabel>{StageLabel::W, StageLabel::W, StageLabel::N2});
  }
  SUBCASE("95 s at 100 Hz gives 3 epochs") {
    const auto rec = edf::EdfRecording::from_contents(psg(95, 100, {stage(0, 120, "Sleep stage 1")}));
    const auto r = align_epochs(rec, "EEG Fpz-Cz");
    CHECK(r.num_epochs() == 3);
    CHECK(r.samples.size() == 9000);
    CHECK(r.sampling_rate == 100.0);
    CHECK(r.samples_per_epoch() == 3000);
  }
  SUBCASE("uncovered epoch is excluded") {
    const auto rec = edf::EdfRecording::from_contents(
        psg(300, 10, {stage(0, 210, "Sleep stage 2"), stage(240, 60, "Sleep stage R")}));
    const auto r = align_epochs(rec, "EEG Fpz-Cz");
    REQUIRE(r.num_epochs() == 10);
    CHECK(r.labels[6] == StageLabel::N2);
    CHECK(r.labels[7] == StageLabel::Excluded);
    CHECK(r.labels[8] == StageLabel::REM);
  }
  SUBCASE("samples are the physical signal") {
    const auto c = psg(60, 10, {});
    const auto rec = edf::EdfRecording::from_contents(c);
    const auto r = align_epochs(rec, "EEG Fpz-Cz");
    for (std::size_t i = 0; i < r.samples.size(); ++i) CHECK(r.samples[i] == c.signals[0].to_physical(c.samples[0][i]));
    CHECK(std::all_of(r.labels.begin(), r.labels.end(), [](auto s) { return s == StageLabel::Excluded; }));
  }
  SUBCASE("errors") {
    const auto rec = edf::EdfRecording::from_contents(
        psg(90, 10, {stage(0, 60, "Sleep stage W"), stage(30, 30, "Sleep stage 2")}));
    try {
      align_epochs(rec, "EEG Pz-Oz");
      FAIL("expected ChannelNotFound");
    } catch (const DatasetError& e) {
      CHECK(e.code() == DatasetErrc::ChannelNotFound);
    }
    try {
      align_epochs(rec, "EEG Fpz-Cz");
      FAIL("expected OverlappingAnnotations");
    } catch (const DatasetError& e) {
      CHECK(e.code() == DatasetErrc::OverlappingAnnotations);
    }
  }
}

TEST_CASE("hypnogram CSV") {
  std::istringstream in("epoch_index,stage\n0,W\n1,Sleep stage 4\n3,REM\n4,Movement time\n99,W\n");
  const auto labels = read_hypnogram_csv(in, 5);
  CHECK(labels ==
        std::vector<StageLabel>{StageLabel::W, StageLabel::N3, StageLabel::Excluded, StageLabel::REM,
                                StageLabel::Excluded});
  std::istringstream bad("0,W\nx,W\n");
  CHECK_THROWS_AS(read_hypnogram_csv(bad, 2), DatasetError);
}

TEST_CASE("labeled records drop the trailing partial epoch") {
  std::vector<double> samples(95);
  const auto r = make_labeled_record("R", samples, 1.0, std::vector<StageLabel>(3, StageLabel::W));
  CHECK(r.samples.size() == 90);
  CHECK_THROWS_AS(make_labeled_record("R", samples, 1.0, std::vector<StageLabel>(4, StageLabel::W)), DatasetError);
  CHECK_THROWS_AS(samples_per_epoch_for_rate(0.7), DatasetError);
  CHECK(samples_per_epoch_for_rate(100.0) == 3000);
}

TEST_CASE("split sizes and determinism") {
  for (std::uint64_t seed : {0ULL, 1ULL, 77ULL}) {
    const auto m = make_split(ids(10), seed);
    CHECK(m.train.size() == 8);
    CHECK(m.val.size() == 1);
    CHECK(m.test.size() == 1);
    CHECK(make_split(ids(10), seed) == m);
  }
  const auto m197 = make_split(ids(197), 3);
  CHECK(m197.val.size() == 19);
  CHECK(m197.test.size() == 19);
  CHECK(m197.train.size() == 159);
  try {
    make_split(ids(5), 0);
    FAIL("expected TooFewRecords");
  } catch (const DatasetError& e) {
    CHECK(e.code() == DatasetErrc::TooFewRecords);
  }
  const nlohmann::json j = m197;
  CHECK(j.get<SplitManifest>() == m197);
}

TEST_CASE("split is a partition for any size and seed") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 10 + rng.index(200);
    const auto all = ids(n);
    const auto m = make_split(all, rng.next());
    std::multiset<std::string> seen;
    for (const auto* part : {&m.train, &m.val, &m.test}) seen.insert(part->begin(), part->end());
    CHECK(seen == std::multiset<std::string>(all.begin(), all.end()));
    CHECK(m.val.size() == n / 10);
    CHECK(m.test.size() == n / 10);
  }
}

TEST_CASE("grouped split keeps a subject's records together") {
  std::vector<std::string> all;
  for (int s = 0; s < 20; ++s) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "SC4%02d", s);
    all.push_back(std::string(buf) + "1E0");
    all.push_back(std::string(buf) + "2E0");
  }
  const auto m = make_split_grouped(all, 9, sedf_subject_key);
  std::map<std::string, int> where;
  int part_index = 0;
  for (const auto* part : {&m.train, &m.val, &m.test}) {
    for (const auto& id : *part) {
      const auto key = sedf_subject_key(id);
      if (where.count(key)) CHECK(where[key] == part_index);
      where[key] = part_index;
    }
    ++part_index;
  }
  CHECK(m.train.size() + m.val.size() + m.test.size() == all.size());
}

TEST_CASE("segment_train windows") {
  SUBCASE("25 epochs, E=10") {
    const auto r = blank_record(25);
    const auto w = segment_train(r, 10);
    REQUIRE(w.size() == 3);
    CHECK(w[0].epoch_offset == 0);
    CHECK(w[1].epoch_offset == 10);
    CHECK(w[2].epoch_offset == 20);
    CHECK(std::count(w[2].pad_mask.begin(), w[2].pad_mask.end(), true) == 5);
    CHECK(w[2].labels[5] == StageLabel::Excluded);
    const auto s = w[2].samples();
    CHECK(s.size() == 300);
    CHECK(s[149] == 750.0);
    CHECK(s[150] == 0.0);
    CHECK(s[299] == 0.0);
  }
  SUBCASE("20 epochs, E=10") {
    const auto w = segment_train(blank_record(20), 10);
    REQUIRE(w.size() == 2);
    CHECK(std::none_of(w[1].pad_mask.begin(), w[1].pad_mask.end(), [](bool b) { return b; }));
  }
  SUBCASE("3 epochs, E=10") {
    const auto w = segment_train(blank_record(3), 10);
    REQUIRE(w.size() == 1);
    CHECK(std::count(w[0].pad_mask.begin(), w[0].pad_mask.end(), true) == 7);
  }
}

TEST_CASE("segment_train covers every epoch exactly once") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t length = 1 + rng.index(80);
    const std::size_t e = 1 + rng.index(30);
    const auto r = blank_record(length);
    std::multiset<std::size_t> seen;
    for (const auto& w : segment_train(r, e)) {
      CHECK(w.num_epochs() == e);
      CHECK(w.samples().size() == e * r.samples_per_epoch());
      for (std::size_t i = 0; i < e; ++i) {
        if (!w.pad_mask[i]) seen.insert(w.epoch_offset + i);
      }
    }
    std::multiset<std::size_t> expected;
    for (std::size_t i = 0; i < length; ++i) expected.insert(i);
    CHECK(seen == expected);
  }
}

TEST_CASE("segment_eval windows") {
  SUBCASE("12 epochs, E=10") {
    const auto w = segment_eval(blank_record(12), 10);
    REQUIRE(w.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(w[i].epoch_offset == i);
  }
  SUBCASE("10 epochs, E=10") { CHECK(segment_eval(blank_record(10), 10).size() == 1); }
  SUBCASE("interior epoch 5 of 14 with E=10") {
    const auto w = segment_eval(blank_record(14), 10);
    std::size_t covering = 0;
    for (const auto& x : w) {
      if (x.epoch_offset <= 5 && 5 < x.epoch_offset + 10) ++covering;
    }
    CHECK(covering == 5);
  }
  SUBCASE("count is max(1, L-E+1)") {
    for (std::size_t length = 1; length < 40; ++length) {
      for (std::size_t e : {1, 3, 10, 20}) {
        const auto expected = length >= e ? length - e + 1 : 1;
        CHECK(segment_eval(blank_record(length), e).size() == expected);
      }
    }
  }
}

TEST_CASE("excluded epochs keep their samples in windows") {
  auto r = blank_record(6);
  r.labels[2] = map_annotation_to_stage("Movement time");
  r.labels[3] = StageLabel::Excluded;
  const auto w = segment_train(r, 6).at(0);
  CHECK(w.labels[2] == StageLabel::Excluded);
  CHECK_FALSE(w.pad_mask[2]);
  const auto s = w.samples();
  for (std::size_t i = 60; i < 120; ++i) CHECK(s[i] == r.samples[i]);
}

TEST_CASE("synthetic chain matches its transition probabilities") {
  for (double corr : {1.0, 3.0}) {
    SynthConfig cfg;
    cfg.n_records = 20;
    cfg.epochs_per_record = 500;
    cfg.correlation_length = corr;
    cfg.sampling_rate = 1.0;
    cfg.seed = 4;
    const auto recs = synth_generate(cfg);
    double counts[5][5] = {};
    double from[5] = {};
    for (const auto& r : recs) {
      for (std::size_t e = 1; e < r.labels.size(); ++e) {
        counts[class_index(r.labels[e - 1])][class_index(r.labels[e])] += 1;
        from[class_index(r.labels[e - 1])] += 1;
      }
    }
    // design: stay 1 - 1/corr, each other stage (1/corr)/4
    const double stay = 1.0 - 1.0 / corr;
    const double other = (1.0 / corr) / 4.0;
    for (std::size_t a = 0; a < 5; ++a) {
      for (std::size_t b = 0; b < 5; ++b) {
        const double expect = a == b ? stay : other;
        CHECK(transition_probability(stage_from_class(a), stage_from_class(b), corr) ==
              doctest::Approx(expect).epsilon(1e-12));
        const double freq = counts[a][b] / from[a];
        CHECK(std::fabs(freq - expect) < 0.03);
      }
    }
  }
}

TEST_CASE("synthetic data is deterministic under seed") {
  SynthConfig cfg;
  cfg.n_records = 3;
  cfg.epochs_per_record = 7;
  const auto a = synth_generate(cfg);
  const auto b = synth_generate(cfg);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].samples == b[i].samples);
    CHECK(a[i].labels == b[i].labels);
  }
  cfg.seed = 1;
  CHECK(synth_generate(cfg)[0].samples != a[0].samples);
}

TEST_CASE("noise free synthetic stages are separable by spectral peak") {
  SynthConfig cfg;
  cfg.n_records = 4;
  cfg.epochs_per_record = 30;
  cfg.noise_std = 0.0;
  cfg.seed = 8;
  const auto recs = synth_generate(cfg);
  std::vector<StageLabel> labels;
  std::vector<StageLabel> predicted;
  for (const auto& r : recs) {
    for (std::size_t e = 0; e < r.num_epochs(); ++e) {
      const double peak = oracle::spectral_peak(r.epoch_samples(e)) * r.sampling_rate;
      std::size_t best = 0;
      for (std::size_t k = 1; k < kNumStages; ++k) {
        if (std::fabs(peak - stage_frequency_hz(stage_from_class(k), r.sampling_rate)) <
            std::fabs(peak - stage_frequency_hz(stage_from_class(best), r.sampling_rate))) {
          best = k;
        }
      }
      labels.push_back(r.labels[e]);
      predicted.push_back(stage_from_class(best));
    }
  }
  CHECK(labels == predicted);
}
