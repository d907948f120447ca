#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "s4sleep/dataset.hpp"
#include "s4sleep/edf.hpp"
#include "s4sleep/training.hpp"

namespace s4sleep::cli {

struct LoadedData {
  std::vector<LabeledRecord> records;
  SplitManifest manifest;
  DataSplit split;  // points into `records`
};

LoadedData load_data(const RunConfig& config);

// <output_dir>/run-YYYYmmdd-HHMMSS unless `explicit_dir` is given; the
// effective config is written there as config.json.
std::filesystem::path prepare_run_dir(const RunConfig& config, const std::optional<std::filesystem::path>& explicit_dir);

// EDF+ with the signal and its hypnogram as stage annotations.
edf::EdfContents record_to_edf(const LabeledRecord& record, std::string_view channel_label);

void cmd_synth(const SynthConfig& synth, const std::filesystem::path& out_dir, std::string_view channel_label,
               std::ostream& log);
void cmd_edf_dump(const std::filesystem::path& file, std::ostream& out);

struct TrainOptions {
  std::optional<std::size_t> stage;  // run only this stage
  std::optional<std::filesystem::path> init_checkpoint;
};

void cmd_train(const RunConfig& config, const std::filesystem::path& run_dir, const TrainOptions& options,
               std::ostream& log);
void cmd_extend(const RunConfig& config, const std::filesystem::path& run_dir,
                const std::filesystem::path& checkpoint, std::ostream& log);
void cmd_predict(const RunConfig& config, const std::filesystem::path& checkpoint, const std::string& split,
                 std::optional<std::size_t> input_epochs, const std::filesystem::path& out, std::ostream& log);
void cmd_evaluate(const std::filesystem::path& predictions, const BootstrapOptions& options,
                  const std::optional<std::filesystem::path>& out, std::ostream& log);
void cmd_compare(const std::filesystem::path& a, const std::filesystem::path& b, const BootstrapOptions& options,
                 const std::optional<std::filesystem::path>& out, std::ostream& log);

}  // namespace s4sleep::cli
