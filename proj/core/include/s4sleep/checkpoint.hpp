#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>

#include "s4sleep/network.hpp"
#include "s4sleep/optimizer.hpp"

namespace s4sleep {

struct CheckpointMeta {
  std::size_t stage_index = 0;
  std::size_t input_epochs = 0;
  double best_val_f1 = std::numeric_limits<double>::quiet_NaN();
};

struct Checkpoint {
  ModelConfig config;
  ParameterSet params;
  std::optional<AdamWState> optimizer;
  CheckpointMeta meta;
};

// Binary container, all integers and floats little-endian:
//   "S4SLCKPT" u32 version
//   u64 n, n bytes of JSON model config
//   u64 stage_index, u64 input_epochs, f64 best_val_f1
//   u64 block count, then per block:
//     u32 name length, name, u8 decay flag, u32 ndim, ndim x u64 dims, f64 values
//   u8 has_optimizer [u64 step, per block f64 m values then f64 v values]
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Model& model, const CheckpointMeta& meta,
                      const AdamWState* optimizer = nullptr);
void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMeta& meta,
                     const AdamWState* optimizer = nullptr);

Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Builds the model the checkpoint describes and loads its parameters.
Model restore_model(const Checkpoint& checkpoint);

}  // namespace s4sleep
