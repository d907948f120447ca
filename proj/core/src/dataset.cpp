#include "s4sleep/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <sstream>

#include "s4sleep/log.hpp"
#include "s4sleep/random.hpp"

namespace s4sleep {
namespace {

[[noreturn]] void fail(DatasetErrc code, const std::string& msg) { throw DatasetError(code, msg); }

constexpr std::string_view kStageNames[] = {"W", "N1", "N2", "N3", "REM", "EXCLUDED"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Epoch count from a time value that should be a whole number of epochs.
std::int64_t to_epochs(double seconds) { return static_cast<std::int64_t>(std::llround(seconds / kEpochSeconds)); }

}  // namespace

StageLabel stage_from_class(std::size_t index) {
  if (index >= kNumStages) throw std::out_of_range("stage class index out of range");
  return static_cast<StageLabel>(index);
}

std::string_view stage_name(StageLabel s) { return kStageNames[static_cast<std::size_t>(s)]; }

std::optional<StageLabel> parse_stage_name(std::string_view name) {
  name = trim(name);
  for (std::size_t i = 0; i < std::size(kStageNames); ++i) {
    if (name == kStageNames[i]) return static_cast<StageLabel>(i);
  }
  return std::nullopt;
}

StageLabel map_annotation_to_stage(std::string_view text) {
  text = trim(text);
  if (text == "Sleep stage W") return StageLabel::W;
  if (text == "Sleep stage 1") return StageLabel::N1;
  if (text == "Sleep stage 2") return StageLabel::N2;
  if (text == "Sleep stage 3" || text == "Sleep stage 4") return StageLabel::N3;
  if (text == "Sleep stage R") return StageLabel::REM;
  if (text == "Movement time" || text == "Sleep stage ?") return StageLabel::Excluded;
  log_warning("unrecognized stage annotation '" + std::string(text) + "' mapped to EXCLUDED");
  return StageLabel::Excluded;
}

std::size_t samples_per_epoch_for_rate(double sampling_rate) {
  const double exact = sampling_rate * kEpochSeconds;
  const auto spe = static_cast<std::size_t>(std::llround(exact));
  if (!(sampling_rate > 0.0) || std::fabs(exact - static_cast<double>(spe)) > 1e-9 * exact || spe == 0 ||
      spe % kTokensPerEpoch != 0) {
    fail(DatasetErrc::InvalidRecord, "sampling rate " + std::to_string(sampling_rate) +
                                         " Hz does not give a whole number of samples per sixth of a minute");
  }
  return spe;
}

std::size_t LabeledRecord::samples_per_epoch() const { return samples_per_epoch_for_rate(sampling_rate); }

std::span<const double> LabeledRecord::epoch_samples(std::size_t epoch) const {
  const std::size_t spe = samples_per_epoch();
  return std::span<const double>(samples).subspan(epoch * spe, spe);
}

LabeledRecord make_labeled_record(std::string record_id, std::vector<double> samples, double sampling_rate,
                                  std::vector<StageLabel> labels) {
  const std::size_t spe = samples_per_epoch_for_rate(sampling_rate);
  const std::size_t epochs = samples.size() / spe;
  if (labels.size() != epochs) {
    fail(DatasetErrc::InvalidRecord, "record " + record_id + " has " + std::to_string(epochs) + " epochs but " +
                                         std::to_string(labels.size()) + " labels");
  }
  samples.resize(epochs * spe);
  return LabeledRecord{std::move(record_id), std::move(samples), sampling_rate, std::move(labels)};
}

std::vector<StageLabel> labels_from_annotations(const edf::AnnotationList& annotations, std::size_t num_epochs) {
  std::vector<StageLabel> labels(num_epochs, StageLabel::Excluded);
  std::vector<bool> covered(num_epochs, false);
  for (const auto& a : annotations) {
    if (!a.duration_s || a.text.empty()) continue;  // time keeping or instantaneous events
    const StageLabel stage = map_annotation_to_stage(a.text);
    const std::int64_t first = to_epochs(a.onset_s);
    const std::int64_t count = to_epochs(*a.duration_s);
    for (std::int64_t e = std::max<std::int64_t>(first, 0);
         e < first + count && e < static_cast<std::int64_t>(num_epochs); ++e) {
      const auto i = static_cast<std::size_t>(e);
      if (covered[i]) {
        fail(DatasetErrc::OverlappingAnnotations, "epoch " + std::to_string(i) + " is covered by two annotations");
      }
      covered[i] = true;
      labels[i] = stage;
    }
  }
  return labels;
}

LabeledRecord align_epochs(const edf::EdfRecording& psg, const edf::AnnotationList& hypnogram,
                           std::string_view channel_label, std::string record_id) {
  const auto channel = psg.find_signal(channel_label);
  if (!channel) fail(DatasetErrc::ChannelNotFound, "channel '" + std::string(channel_label) + "' not found");
  const double rate = psg.sampling_rate(*channel);
  const std::size_t spe = samples_per_epoch_for_rate(rate);
  const std::size_t epochs = psg.signal_length(*channel) / spe;
  auto samples = psg.read_signal(*channel, 0, epochs * spe);
  return make_labeled_record(std::move(record_id), std::move(samples), rate,
                             labels_from_annotations(hypnogram, epochs));
}

LabeledRecord align_epochs(const edf::EdfRecording& rec, std::string_view channel_label) {
  std::string id = rec.header().recording_id;
  return align_epochs(rec, rec.annotations(), channel_label, std::move(id));
}

std::vector<StageLabel> read_hypnogram_csv(std::istream& in, std::size_t num_epochs) {
  std::vector<StageLabel> labels(num_epochs, StageLabel::Excluded);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    const auto comma = view.find(',');
    if (comma == std::string_view::npos) {
      fail(DatasetErrc::MalformedHypnogram, "line " + std::to_string(line_no) + ": expected two columns");
    }
    const std::string_view index_text = trim(view.substr(0, comma));
    const std::string_view stage_text = trim(view.substr(comma + 1));
    std::size_t index = 0;
    try {
      std::size_t used = 0;
      index = std::stoul(std::string(index_text), &used);
      if (used != index_text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      if (line_no == 1) continue;  // header row
      fail(DatasetErrc::MalformedHypnogram, "line " + std::to_string(line_no) + ": bad epoch index");
    }
    if (index >= num_epochs) continue;
    if (auto s = parse_stage_name(stage_text)) {
      labels[index] = *s;
    } else {
      labels[index] = map_annotation_to_stage(stage_text);
    }
  }
  return labels;
}

void to_json(nlohmann::json& j, const SplitManifest& m) {
  j = nlohmann::json{{"seed", m.seed}, {"train", m.train}, {"val", m.val}, {"test", m.test}};
}

void from_json(const nlohmann::json& j, SplitManifest& m) {
  j.at("seed").get_to(m.seed);
  j.at("train").get_to(m.train);
  j.at("val").get_to(m.val);
  j.at("test").get_to(m.test);
}

SplitManifest make_split(std::span<const std::string> record_ids, std::uint64_t seed) {
  return make_split_grouped(record_ids, seed, [](const std::string& id) { return id; });
}

SplitManifest make_split_grouped(std::span<const std::string> record_ids, std::uint64_t seed,
                                 const std::function<std::string(const std::string&)>& group_of) {
  const std::size_t n = record_ids.size();
  if (n < 10) fail(DatasetErrc::TooFewRecords, "a split needs at least 10 records, got " + std::to_string(n));

  // Groups in order of first appearance, then a seeded shuffle.
  std::vector<std::string> group_names;
  std::map<std::string, std::vector<std::string>> members;
  for (const auto& id : record_ids) {
    auto key = group_of(id);
    auto [it, inserted] = members.try_emplace(key);
    if (inserted) group_names.push_back(key);
    it->second.push_back(id);
  }
  Rng rng(seed);
  rng.shuffle(group_names);

  const std::size_t n_val = n / 10;
  const std::size_t n_test = n / 10;
  SplitManifest m;
  m.seed = seed;
  for (const auto& g : group_names) {
    auto& ids = members[g];
    auto& dest = m.test.size() < n_test ? m.test : (m.val.size() < n_val ? m.val : m.train);
    dest.insert(dest.end(), ids.begin(), ids.end());
  }
  if (m.train.empty() || m.val.empty() || m.test.empty()) {
    fail(DatasetErrc::TooFewRecords, "grouping leaves an empty split");
  }
  return m;
}

std::string sedf_subject_key(const std::string& record_id) { return record_id.substr(0, 5); }

Window make_window(const LabeledRecord& rec, std::size_t epoch_offset, std::size_t epochs) {
  Window w;
  w.record = &rec;
  w.epoch_offset = epoch_offset;
  w.labels.resize(epochs, StageLabel::Excluded);
  w.pad_mask.resize(epochs, true);
  for (std::size_t i = 0; i < epochs && epoch_offset + i < rec.num_epochs(); ++i) {
    w.labels[i] = rec.labels[epoch_offset + i];
    w.pad_mask[i] = false;
  }
  return w;
}

void Window::copy_samples(std::span<double> out) const {
  const std::size_t spe = samples_per_epoch();
  if (out.size() != num_epochs() * spe) throw std::invalid_argument("window sample buffer has the wrong size");
  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t real_epochs =
      epoch_offset < record->num_epochs() ? std::min(num_epochs(), record->num_epochs() - epoch_offset) : 0;
  const auto begin = record->samples.begin() + static_cast<std::ptrdiff_t>(epoch_offset * spe);
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(real_epochs * spe), out.begin());
}

std::vector<double> Window::samples() const {
  std::vector<double> out(num_epochs() * samples_per_epoch());
  copy_samples(out);
  return out;
}

std::vector<Window> segment_train(const LabeledRecord& rec, std::size_t epochs) {
  if (epochs == 0) throw std::invalid_argument("window length must be at least one epoch");
  std::vector<Window> out;
  for (std::size_t off = 0; off < rec.num_epochs(); off += epochs) out.push_back(make_window(rec, off, epochs));
  if (out.empty()) out.push_back(make_window(rec, 0, epochs));
  return out;
}

std::vector<Window> segment_eval(const LabeledRecord& rec, std::size_t epochs) {
  if (epochs == 0) throw std::invalid_argument("window length must be at least one epoch");
  const std::size_t L = rec.num_epochs();
  const std::size_t last = L > epochs ? L - epochs : 0;
  std::vector<Window> out;
  out.reserve(last + 1);
  for (std::size_t off = 0; off <= last; ++off) out.push_back(make_window(rec, off, epochs));
  return out;
}

}  // namespace s4sleep
