#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s4sleep/dataset.hpp"
#include "s4sleep/error.hpp"
#include "s4sleep/network.hpp"

namespace s4sleep {

enum class EvalErrc { UncoveredEpoch, NoScoreableEpochs, EmptyTestSet, MisalignedPredictionSets, MalformedPredictions };
using EvalError = CodedError<EvalErrc>;

using Probs = std::array<double, kNumStages>;

// Row-wise softmax of (epochs x 5) logits.
std::vector<Probs> softmax(const Mat& logits);

// Highest probability, ties to the lower class index.
StageLabel argmax_stage(const Probs& p);

struct RecordPrediction {
  std::string record_id;
  std::vector<Probs> probs;
  std::vector<StageLabel> predicted;
  std::vector<StageLabel> labels;

  std::size_t num_epochs() const { return probs.size(); }
};

struct PredictionSet {
  std::vector<RecordPrediction> records;
};

struct WindowProbs {
  std::size_t epoch_offset = 0;
  std::vector<Probs> probs;  // one per window epoch; entries past the record end are ignored
};

// Per-epoch mean over every window covering the epoch.
RecordPrediction aggregate_windows(std::string record_id, std::span<const StageLabel> labels,
                                   std::span<const WindowProbs> windows);

enum class WindowScheme {
  StrideOne,       // offsets 0..L-E, test protocol
  NonOverlapping,  // offsets 0, E, 2E, ... as in training
};

// Runs length-E windows over the record and aggregates. The encoder runs once
// per record and windows reuse its tokens.
RecordPrediction predict_record(const Model& model, const LabeledRecord& record, std::size_t input_epochs,
                                WindowScheme scheme = WindowScheme::StrideOne);
PredictionSet predict_records(const Model& model, std::span<const LabeledRecord* const> records,
                              std::size_t input_epochs, WindowScheme scheme = WindowScheme::StrideOne);

struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumStages>, kNumStages> counts{};  // [label][predicted]

  void add(StageLabel label, StageLabel predicted);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  std::uint64_t total() const;
};

ConfusionMatrix confusion(const RecordPrediction& record);
ConfusionMatrix confusion(const PredictionSet& set);

// Unweighted mean of per-class F1 over classes present in labels or
// predictions; a present class with no true positives scores 0.
double macro_f1(const ConfusionMatrix& cm);
double macro_f1(const PredictionSet& set);
double macro_f1(std::span<const StageLabel> labels, std::span<const StageLabel> predicted);

enum class ResampleUnit { Record, Epoch };

struct BootstrapOptions {
  std::size_t iterations = 1000;
  double level = 0.95;
  ResampleUnit unit = ResampleUnit::Record;
  std::uint64_t seed = 0;
};

struct BootstrapSummary {
  double point_estimate = 0.0;
  std::vector<double> resamples;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool is_difference = false;
  bool significant = false;  // difference summaries only: CI excludes zero
};

// Percentile of sorted values with position q*n - 1/2 (0-based), linearly
// interpolated and clamped to the ends.
double percentile(std::span<const double> sorted, double q);

BootstrapSummary bootstrap_ci(const PredictionSet& set, const BootstrapOptions& options = {});

// Paired bootstrap of macro-F1(a) - macro-F1(b); both sets must cover the
// same records, epochs and labels in the same order.
BootstrapSummary compare_models(const PredictionSet& a, const PredictionSet& b, const BootstrapOptions& options = {});

void to_json(nlohmann::json& j, const BootstrapSummary& s);

// Tab-separated: record_id epoch_index p_W p_N1 p_N2 p_N3 p_REM stage label
void write_predictions(std::ostream& out, const PredictionSet& set);
PredictionSet read_predictions(std::istream& in);
void save_predictions(const std::filesystem::path& path, const PredictionSet& set);
PredictionSet load_predictions(const std::filesystem::path& path);

}  // namespace s4sleep
