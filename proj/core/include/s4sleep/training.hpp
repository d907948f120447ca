#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "s4sleep/dataset.hpp"
#include "s4sleep/error.hpp"
#include "s4sleep/evaluation.hpp"
#include "s4sleep/network.hpp"
#include "s4sleep/optimizer.hpp"

namespace s4sleep {

enum class TrainErrc { IncompleteAccumulation, InvalidConfig };
using TrainError = CodedError<TrainErrc>;

struct CurriculumStage {
  std::size_t input_epochs = 10;
  std::size_t training_epochs = 50;

  bool operator==(const CurriculumStage&) const = default;
};

// (10,50) (20,10) (40,10) (50,10) (100,10) (200,10)
std::vector<CurriculumStage> default_curriculum();

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t effective_batch = 64;
  std::size_t micro_batch = 8;
  double focal_gamma = 2.0;
  double weight_decay = 0.01;
  std::vector<CurriculumStage> curriculum = default_curriculum();
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // workers per micro-batch; results do not depend on it
  WindowScheme validation_windows = WindowScheme::NonOverlapping;

  void validate() const;
  AdamWOptions adamw() const;
};

struct DataSplit {
  std::vector<const LabeledRecord*> train;
  std::vector<const LabeledRecord*> val;
  std::vector<const LabeledRecord*> test;
};

struct StepResult {
  double loss_sum = 0.0;
  std::size_t scored_epochs = 0;
  bool stepped = false;
};

// One optimizer step over `windows`, processed micro_batch at a time. Every
// window's gradient is computed separately and summed in window order, so
// the update does not depend on micro_batch or threads. The sum is divided
// by the batch's scored-epoch count; a batch with none scored does not step.
StepResult accumulate_and_step(Model& model, std::span<const Window> windows, const TrainConfig& config,
                               AdamWState& state, std::uint64_t dropout_seed);

struct EpochMetrics {
  std::size_t stage_index = 0;
  std::size_t input_epochs = 0;
  std::size_t epoch = 0;  // training pass within the stage, from 0
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
  double wall_seconds = 0.0;
};

// Everything except wall time, which is not reproducible.
void to_json(nlohmann::json& j, const EpochMetrics& m);

struct StageResult {
  std::size_t stage_index = 0;
  std::size_t input_epochs = 0;
  std::vector<double> val_trace;
  std::vector<double> train_loss;
  std::optional<std::size_t> best_epoch;
  double best_val_f1 = std::numeric_limits<double>::quiet_NaN();
  ParameterSet best_params;
  AdamWState best_optimizer;
  std::optional<double> test_macro_f1;
  PredictionSet test_predictions;
};

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(const StageResult&, const Model&)> on_stage_end;
};

double validation_macro_f1(const Model& model, std::span<const LabeledRecord* const> records,
                           std::size_t input_epochs, WindowScheme scheme);

// T passes over shuffled non-overlapping windows of length E with fresh
// optimizer moments; validation after each pass; the model leaves holding
// the best pass's parameters.
StageResult run_stage(Model& model, const DataSplit& data, std::size_t stage_index, CurriculumStage stage,
                      const TrainConfig& config, const TrainHooks& hooks = {});

// Stages first_stage .. first_stage+stage_count-1 (clipped to the
// curriculum), each starting from the previous best and followed by a
// test-set evaluation when the split has test records.
std::vector<StageResult> run_curriculum(Model& model, const DataSplit& data, const TrainConfig& config,
                                        const TrainHooks& hooks = {}, std::size_t first_stage = 0,
                                        std::size_t stage_count = std::numeric_limits<std::size_t>::max());

}  // namespace s4sleep
