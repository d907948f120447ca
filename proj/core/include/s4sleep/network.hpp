#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "s4sleep/dataset.hpp"
#include "s4sleep/error.hpp"
#include "s4sleep/layers.hpp"
#include "s4sleep/parameters.hpp"
#include "s4sleep/tensor.hpp"

namespace s4sleep {

enum class NetworkErrc { ShapeMismatch, NonFiniteActivation, IncompatibleCheckpoint, BadCheckpoint, InvalidConfig };
using NetworkError = CodedError<NetworkErrc>;

using layers::RunMode;

struct ConvSpec {
  std::size_t channels = 0;  // 0: model_dim
  std::size_t kernel = 1;
  std::size_t stride = 0;  // 0: derived from the sub-epoch length

  bool operator==(const ConvSpec&) const = default;
};

struct ModelConfig {
  std::size_t model_dim = 128;
  std::size_t encoder_s4_layers = 4;
  std::size_t predictor_s4_layers = 4;
  std::size_t states_per_channel = 64;
  ConvSpec conv1{128, 25, 0};
  ConvSpec conv2{0, 7, 0};
  double dropout = 0.1;
  bool bidirectional = true;
  std::uint64_t init_seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ConvSpec& c);
void from_json(const nlohmann::json& j, ConvSpec& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct EncoderStrides {
  std::size_t conv1 = 1;
  std::size_t conv2 = 1;
};

// Explicit strides win. Otherwise the sub-epoch is reduced by roughly
// samples/30: conv1 takes the largest factor <= 5, conv2 the rest, giving
// (5, 4) for 600-sample sub-epochs.
EncoderStrides encoder_strides(const ModelConfig& config, std::size_t sub_epoch_samples);

// Sub-epoch encoder, sequence predictor and epoch classifier:
//   samples (E*S) -> tokens (5E, d) -> tokens (5E, d) -> logits (E, 5)
// The encoder sees each sub-epoch of S/5 samples on its own.
class Model {
 public:
  struct EncoderCache {
    std::size_t epochs = 0;
    std::size_t sub_samples = 0;
    EncoderStrides strides;
    layers::SeqShape input_shape;
    layers::SeqShape conv1_shape;
    layers::SeqShape conv2_shape;
    Mat input;
    Mat pre1;
    Mat act1;
    Mat pre2;
    std::vector<layers::S4Block::Cache> blocks;
  };

  struct PredictorCache {
    std::size_t tokens = 0;
    std::vector<layers::S4Block::Cache> blocks;
    Mat pooled;
  };

  struct ForwardCache {
    EncoderCache encoder;
    PredictorCache predictor;
  };

  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }

  // Replaces every parameter by name; names and shapes must match exactly.
  void load_parameters(const ParameterSet& source);

  Mat encode_epochs(std::span<const double> samples, std::size_t samples_per_epoch, const RunMode& mode,
                    EncoderCache* cache = nullptr) const;
  Mat predict_sequence(const Mat& tokens, const RunMode& mode, PredictorCache* cache = nullptr) const;
  Mat classify(const Mat& tokens, PredictorCache* cache = nullptr) const;

  Mat forward(std::span<const double> samples, std::size_t samples_per_epoch, const RunMode& mode,
              ForwardCache* cache = nullptr) const;
  Mat forward(const Window& window, const RunMode& mode, ForwardCache* cache = nullptr) const;

  // Accumulates dL/dparam into `grads` given dL/dlogits.
  void backward(const ForwardCache& cache, const Mat& dlogits, GradientSet& grads) const;

  // Predictor and head on an already encoded token sequence.
  Mat logits_from_tokens(const Mat& tokens, const RunMode& mode) const;

  // Inference tokens for a whole record plus the token block of one
  // all-zero epoch (what padded window epochs encode to).
  struct RecordTokens {
    Mat tokens;
    Mat pad_tokens;
  };
  RecordTokens encode_record(const LabeledRecord& record, std::size_t chunk_epochs = 64) const;

  const layers::Linear& head() const { return head_; }
  const std::vector<layers::S4Block>& encoder_blocks() const { return encoder_blocks_; }
  const std::vector<layers::S4Block>& predictor_blocks() const { return predictor_blocks_; }

  // Dropout streams of predictor blocks start here.
  static constexpr std::uint64_t kPredictorStream = 1000;

 private:
  void check_finite(const Mat& m, const RunMode& mode, const char* where) const;

  ModelConfig config_;
  ParameterSet params_;
  layers::Conv1d conv1_;
  layers::Conv1d conv2_;
  std::vector<layers::S4Block> encoder_blocks_;
  std::vector<layers::S4Block> predictor_blocks_;
  layers::Linear head_;
};

}  // namespace s4sleep
