#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "s4sleep/error.hpp"
#include "s4sleep/evaluation.hpp"
#include "s4sleep/network.hpp"
#include "s4sleep/synth.hpp"
#include "s4sleep/training.hpp"

namespace s4sleep::cli {

enum class ConfigErrc { MissingKey, UnknownKey, TypeError, InvalidValue, Io };

class ConfigError : public CodedError<ConfigErrc> {
 public:
  ConfigError(ConfigErrc code, std::string key, const std::string& what)
      : CodedError(code, what), key_(std::move(key)) {}

  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  std::string data_source;  // "synthetic" or a directory of EDF files
  SynthConfig synth;
  std::string channel = "EEG Fpz-Cz";
  std::uint64_t split_seed = 0;
  bool split_by_subject = false;
  ModelConfig model;
  TrainConfig train;
  std::string output_dir;
  std::size_t bootstrap_iterations = 1000;
  std::uint64_t bootstrap_seed = 0;
  ResampleUnit resample_unit = ResampleUnit::Record;

  bool is_synthetic() const { return data_source == "synthetic"; }
  BootstrapOptions bootstrap() const;
};

// Flat object; every key is validated, unknown keys are rejected, missing
// optional keys take their defaults.
RunConfig parse_config(const nlohmann::json& flat);

// The flat form with every key present (defaults filled in).
nlohmann::json effective_config(const RunConfig& config);

// "key=value"; the value is read as JSON and falls back to a plain string.
void apply_override(nlohmann::json& flat, std::string_view assignment);

// Reads the file (if any), applies overrides in order, parses.
RunConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});
RunConfig load_config(std::span<const std::string> overrides);

}  // namespace s4sleep::cli
