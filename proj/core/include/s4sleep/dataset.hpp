#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "s4sleep/edf.hpp"
#include "s4sleep/error.hpp"

namespace s4sleep {

enum class DatasetErrc {
  ChannelNotFound,
  OverlappingAnnotations,
  TooFewRecords,
  InvalidRecord,
  MalformedHypnogram,
  Io,
};

using DatasetError = CodedError<DatasetErrc>;

inline constexpr double kEpochSeconds = 30.0;
inline constexpr std::size_t kNumStages = 5;
inline constexpr std::size_t kTokensPerEpoch = 5;

// Five scoreable stages (class indices 0..4) plus EXCLUDED, which never
// contributes to loss or metrics.
enum class StageLabel : std::uint8_t { W = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4, Excluded = 5 };

constexpr bool is_scoreable(StageLabel s) { return s != StageLabel::Excluded; }
constexpr std::size_t class_index(StageLabel s) { return static_cast<std::size_t>(s); }
StageLabel stage_from_class(std::size_t index);
std::string_view stage_name(StageLabel s);
std::optional<StageLabel> parse_stage_name(std::string_view name);

// Rechtschaffen & Kales hypnogram text to the five-stage scheme: stages 3 and
// 4 merge into N3; movement, "?" and anything unrecognized become EXCLUDED.
StageLabel map_annotation_to_stage(std::string_view text);

// One EEG channel plus one label per 30 s epoch. Samples past the last full
// epoch are dropped on construction.
struct LabeledRecord {
  std::string record_id;
  std::vector<double> samples;
  double sampling_rate = 100.0;
  std::vector<StageLabel> labels;

  std::size_t samples_per_epoch() const;
  std::size_t num_epochs() const { return labels.size(); }
  std::span<const double> epoch_samples(std::size_t epoch) const;
};

// Validates the rate (whole samples per epoch and per fifth of an epoch),
// truncates the trailing partial epoch, and checks the label count.
LabeledRecord make_labeled_record(std::string record_id, std::vector<double> samples, double sampling_rate,
                                  std::vector<StageLabel> labels);

std::size_t samples_per_epoch_for_rate(double sampling_rate);

// Expands stage annotations into per-epoch labels over the named channel.
// Epochs without a covering annotation are EXCLUDED.
LabeledRecord align_epochs(const edf::EdfRecording& rec, std::string_view channel_label);
LabeledRecord align_epochs(const edf::EdfRecording& psg, const edf::AnnotationList& hypnogram,
                           std::string_view channel_label, std::string record_id);

std::vector<StageLabel> labels_from_annotations(const edf::AnnotationList& annotations, std::size_t num_epochs);

// Two-column CSV hypnogram (epoch_index, stage_string), optional header row.
// Missing epochs are EXCLUDED.
std::vector<StageLabel> read_hypnogram_csv(std::istream& in, std::size_t num_epochs);

struct SplitManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  bool operator==(const SplitManifest&) const = default;
};

void to_json(nlohmann::json& j, const SplitManifest& m);
void from_json(const nlohmann::json& j, SplitManifest& m);

// Seeded shuffle, then 10% validation, 10% test (both rounded down), rest train.
SplitManifest make_split(std::span<const std::string> record_ids, std::uint64_t seed);

// Same proportions, but every record of a group lands in the same split.
SplitManifest make_split_grouped(std::span<const std::string> record_ids, std::uint64_t seed,
                                 const std::function<std::string(const std::string&)>& group_of);

// Sleep-EDF naming: SC4ssNxx / ST7ssNxx, subject = first five characters.
std::string sedf_subject_key(const std::string& record_id);

// E consecutive epochs of one record starting at `epoch_offset`. Epochs past
// the record end are zero-padded, labeled EXCLUDED, and flagged in pad_mask.
// Holds a pointer to the record, which must outlive the window.
struct Window {
  const LabeledRecord* record = nullptr;
  std::size_t epoch_offset = 0;
  std::vector<StageLabel> labels;
  std::vector<bool> pad_mask;

  std::size_t num_epochs() const { return labels.size(); }
  std::size_t samples_per_epoch() const { return record->samples_per_epoch(); }
  const std::string& record_id() const { return record->record_id; }
  std::vector<double> samples() const;
  void copy_samples(std::span<double> out) const;
};

Window make_window(const LabeledRecord& rec, std::size_t epoch_offset, std::size_t epochs);

// Non-overlapping windows at offsets 0, E, 2E, ...; the last one padded.
std::vector<Window> segment_train(const LabeledRecord& rec, std::size_t epochs);

// Stride-one windows at offsets 0..max(0, L-E); short records give one padded window.
std::vector<Window> segment_eval(const LabeledRecord& rec, std::size_t epochs);

// Loads every recording of a directory. Files carrying their own annotations
// are used directly; Sleep-EDF style "*-PSG.edf" files are paired with the
// "*-Hypnogram.edf" file sharing the first six characters of the name.
std::vector<LabeledRecord> load_edf_directory(const std::filesystem::path& dir, std::string_view channel_label);

}  // namespace s4sleep
