#include "s4sleep/network.hpp"

#include <string>

#include "s4sleep/random.hpp"

namespace s4sleep {
namespace {

[[noreturn]] void shape_error(const std::string& msg) { throw NetworkError(NetworkErrc::ShapeMismatch, msg); }

std::size_t largest_factor_up_to(std::size_t n, std::size_t limit) {
  for (std::size_t f = std::min(n, limit); f > 1; --f) {
    if (n % f == 0) return f;
  }
  return 1;
}

void check_known_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, const char* what) {
  if (!j.is_object()) throw NetworkError(NetworkErrc::InvalidConfig, std::string(what) + " must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known) throw NetworkError(NetworkErrc::InvalidConfig, std::string(what) + ": unknown key '" + item.key() + "'");
  }
}

template <class T>
void read_optional(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void to_json(nlohmann::json& j, const ConvSpec& c) {
  j = nlohmann::json{{"channels", c.channels}, {"kernel", c.kernel}, {"stride", c.stride}};
}

void from_json(const nlohmann::json& j, ConvSpec& c) {
  check_known_keys(j, {"channels", "kernel", "stride"}, "conv spec");
  read_optional(j, "channels", c.channels);
  read_optional(j, "kernel", c.kernel);
  read_optional(j, "stride", c.stride);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"model_dim", c.model_dim},
                     {"encoder_s4_layers", c.encoder_s4_layers},
                     {"predictor_s4_layers", c.predictor_s4_layers},
                     {"states_per_channel", c.states_per_channel},
                     {"conv1", c.conv1},
                     {"conv2", c.conv2},
                     {"dropout", c.dropout},
                     {"bidirectional", c.bidirectional},
                     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  check_known_keys(j,
                   {"model_dim", "encoder_s4_layers", "predictor_s4_layers", "states_per_channel", "conv1", "conv2",
                    "dropout", "bidirectional", "init_seed"},
                   "model config");
  read_optional(j, "model_dim", c.model_dim);
  read_optional(j, "encoder_s4_layers", c.encoder_s4_layers);
  read_optional(j, "predictor_s4_layers", c.predictor_s4_layers);
  read_optional(j, "states_per_channel", c.states_per_channel);
  read_optional(j, "conv1", c.conv1);
  read_optional(j, "conv2", c.conv2);
  read_optional(j, "dropout", c.dropout);
  read_optional(j, "bidirectional", c.bidirectional);
  read_optional(j, "init_seed", c.init_seed);
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& msg) { throw NetworkError(NetworkErrc::InvalidConfig, msg); };
  if (model_dim == 0) bad("model_dim must be positive");
  if (states_per_channel == 0) bad("states_per_channel must be positive");
  if (conv1.kernel == 0 || conv2.kernel == 0) bad("convolution kernels must be positive");
  if (conv2.channels != 0 && conv2.channels != model_dim) bad("conv2 channels must equal model_dim");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0, 1)");
}

EncoderStrides encoder_strides(const ModelConfig& config, std::size_t sub_epoch_samples) {
  const std::size_t factor = std::max<std::size_t>(1, sub_epoch_samples / 30);
  EncoderStrides s;
  if (config.conv1.stride != 0 && config.conv2.stride != 0) {
    s.conv1 = config.conv1.stride;
    s.conv2 = config.conv2.stride;
  } else if (config.conv1.stride != 0) {
    s.conv1 = config.conv1.stride;
    s.conv2 = std::max<std::size_t>(1, factor / s.conv1);
  } else if (config.conv2.stride != 0) {
    s.conv2 = config.conv2.stride;
    s.conv1 = std::max<std::size_t>(1, factor / s.conv2);
  } else {
    s.conv1 = largest_factor_up_to(factor, 5);
    s.conv2 = factor / s.conv1;
  }
  return s;
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.init_seed);
  const std::size_t d = config_.model_dim;
  const std::size_t c1 = config_.conv1.channels != 0 ? config_.conv1.channels : d;
  conv1_ = layers::Conv1d(params_, "encoder.conv1", 1, c1, config_.conv1.kernel, rng);
  conv2_ = layers::Conv1d(params_, "encoder.conv2", c1, d, config_.conv2.kernel, rng);
  for (std::size_t i = 0; i < config_.encoder_s4_layers; ++i) {
    encoder_blocks_.emplace_back(params_, "encoder.block" + std::to_string(i), d, config_.states_per_channel,
                                 config_.bidirectional, config_.dropout, rng);
  }
  for (std::size_t i = 0; i < config_.predictor_s4_layers; ++i) {
    predictor_blocks_.emplace_back(params_, "predictor.block" + std::to_string(i), d, config_.states_per_channel,
                                   config_.bidirectional, config_.dropout, rng);
  }
  head_ = layers::Linear(params_, "head", d, kNumStages, rng);
}

void Model::load_parameters(const ParameterSet& source) {
  if (source.size() != params_.size()) {
    throw NetworkError(NetworkErrc::IncompatibleCheckpoint,
                       "checkpoint has " + std::to_string(source.size()) + " parameter blocks, model expects " +
                           std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const ParamInfo& info = params_.info(i);
    const auto id = source.find(info.name);
    if (!id) throw NetworkError(NetworkErrc::IncompatibleCheckpoint, "checkpoint lacks parameter " + info.name);
    if (source.info(*id).shape != info.shape) {
      throw NetworkError(NetworkErrc::IncompatibleCheckpoint, "shape mismatch for parameter " + info.name);
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto src = source.values(*source.find(params_.info(i).name));
    auto dst = params_.mutable_values(i);
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void Model::check_finite(const Mat& m, const RunMode& mode, const char* where) const {
#ifdef NDEBUG
  if (!mode.check_finite) return;
#else
  (void)mode;
#endif
  if (!m.allFinite()) {
    throw NetworkError(NetworkErrc::NonFiniteActivation, std::string("non-finite activation after ") + where);
  }
}

Mat Model::encode_epochs(std::span<const double> samples, std::size_t samples_per_epoch, const RunMode& mode,
                         EncoderCache* cache) const {
  if (samples_per_epoch == 0 || samples_per_epoch % kTokensPerEpoch != 0) {
    shape_error("samples per epoch must be a positive multiple of 5");
  }
  if (samples.empty() || samples.size() % samples_per_epoch != 0) {
    shape_error("window of " + std::to_string(samples.size()) + " samples is not a whole number of " +
                std::to_string(samples_per_epoch) + "-sample epochs");
  }
  const std::size_t epochs = samples.size() / samples_per_epoch;
  const std::size_t sub = samples_per_epoch / kTokensPerEpoch;
  const std::size_t n_tokens = epochs * kTokensPerEpoch;
  const EncoderStrides strides = encoder_strides(config_, sub);

  const layers::SeqShape in_shape{n_tokens, sub};
  const layers::SeqShape shape1{n_tokens, layers::Conv1d::output_steps(sub, strides.conv1)};
  const layers::SeqShape shape2{n_tokens, layers::Conv1d::output_steps(shape1.steps, strides.conv2)};

  Mat input = ConstMatMap(samples.data(), static_cast<Eigen::Index>(samples.size()), 1);
  Mat pre1 = conv1_.forward(params_, input, in_shape, strides.conv1);
  Mat act1 = layers::gelu(pre1);
  Mat pre2 = conv2_.forward(params_, act1, shape1, strides.conv2);
  Mat h = layers::gelu(pre2);
  check_finite(h, mode, "encoder convolutions");

  std::vector<layers::S4Block::Cache> block_caches(cache ? encoder_blocks_.size() : 0);
  for (std::size_t b = 0; b < encoder_blocks_.size(); ++b) {
    h = encoder_blocks_[b].forward(params_, h, shape2, mode, b, cache ? &block_caches[b] : nullptr);
    check_finite(h, mode, "encoder S4 block");
  }

  Mat tokens(static_cast<Eigen::Index>(n_tokens), static_cast<Eigen::Index>(config_.model_dim));
  const auto steps = static_cast<Eigen::Index>(shape2.steps);
  for (std::size_t t = 0; t < n_tokens; ++t) {
    tokens.row(static_cast<Eigen::Index>(t)) = h.middleRows(static_cast<Eigen::Index>(t) * steps, steps).colwise().mean();
  }

  if (cache) {
    cache->epochs = epochs;
    cache->sub_samples = sub;
    cache->strides = strides;
    cache->input_shape = in_shape;
    cache->conv1_shape = shape1;
    cache->conv2_shape = shape2;
    cache->input = std::move(input);
    cache->pre1 = std::move(pre1);
    cache->act1 = std::move(act1);
    cache->pre2 = std::move(pre2);
    cache->blocks = std::move(block_caches);
  }
  return tokens;
}

Mat Model::predict_sequence(const Mat& tokens, const RunMode& mode, PredictorCache* cache) const {
  if (tokens.cols() != static_cast<Eigen::Index>(config_.model_dim) || tokens.rows() == 0 ||
      tokens.rows() % static_cast<Eigen::Index>(kTokensPerEpoch) != 0) {
    shape_error("predictor expects 5E tokens of width " + std::to_string(config_.model_dim));
  }
  const layers::SeqShape shape{1, static_cast<std::size_t>(tokens.rows())};
  std::vector<layers::S4Block::Cache> block_caches(cache ? predictor_blocks_.size() : 0);
  Mat h = tokens;
  for (std::size_t b = 0; b < predictor_blocks_.size(); ++b) {
    h = predictor_blocks_[b].forward(params_, h, shape, mode, kPredictorStream + b, cache ? &block_caches[b] : nullptr);
    check_finite(h, mode, "predictor S4 block");
  }
  if (cache) {
    cache->tokens = shape.steps;
    cache->blocks = std::move(block_caches);
  }
  return h;
}

Mat Model::classify(const Mat& tokens, PredictorCache* cache) const {
  const auto group = static_cast<Eigen::Index>(kTokensPerEpoch);
  if (tokens.cols() != static_cast<Eigen::Index>(config_.model_dim) || tokens.rows() % group != 0) {
    shape_error("classifier expects a multiple of 5 tokens of width " + std::to_string(config_.model_dim));
  }
  const Eigen::Index epochs = tokens.rows() / group;
  Mat pooled(epochs, tokens.cols());
  for (Eigen::Index e = 0; e < epochs; ++e) pooled.row(e) = tokens.middleRows(e * group, group).colwise().mean();
  Mat logits = head_.forward(params_, pooled);
  if (cache) cache->pooled = std::move(pooled);
  return logits;
}

Mat Model::forward(std::span<const double> samples, std::size_t samples_per_epoch, const RunMode& mode,
                   ForwardCache* cache) const {
  const Mat tokens = encode_epochs(samples, samples_per_epoch, mode, cache ? &cache->encoder : nullptr);
  const Mat mixed = predict_sequence(tokens, mode, cache ? &cache->predictor : nullptr);
  return classify(mixed, cache ? &cache->predictor : nullptr);
}

Mat Model::forward(const Window& window, const RunMode& mode, ForwardCache* cache) const {
  const std::vector<double> samples = window.samples();
  return forward(samples, window.samples_per_epoch(), mode, cache);
}

Mat Model::logits_from_tokens(const Mat& tokens, const RunMode& mode) const {
  return classify(predict_sequence(tokens, mode));
}

void Model::backward(const ForwardCache& cache, const Mat& dlogits, GradientSet& grads) const {
  const EncoderCache& ec = cache.encoder;
  const PredictorCache& pc = cache.predictor;
  const auto epochs = static_cast<Eigen::Index>(ec.epochs);
  if (dlogits.rows() != epochs || dlogits.cols() != static_cast<Eigen::Index>(kNumStages)) {
    shape_error("logit gradient shape does not match the cached forward pass");
  }
  if (ec.blocks.size() != encoder_blocks_.size() || pc.blocks.size() != predictor_blocks_.size()) {
    shape_error("forward cache was not recorded");
  }

  const Mat dpooled = head_.backward(params_, pc.pooled, dlogits, grads);
  const auto group = static_cast<Eigen::Index>(kTokensPerEpoch);
  Mat dh(epochs * group, dpooled.cols());
  for (Eigen::Index t = 0; t < dh.rows(); ++t) dh.row(t) = dpooled.row(t / group) / static_cast<double>(group);

  const layers::SeqShape token_shape{1, pc.tokens};
  for (std::size_t b = predictor_blocks_.size(); b-- > 0;) {
    dh = predictor_blocks_[b].backward(params_, pc.blocks[b], token_shape, dh, grads);
  }

  const auto steps = static_cast<Eigen::Index>(ec.conv2_shape.steps);
  Mat dx(dh.rows() * steps, dh.cols());
  for (Eigen::Index t = 0; t < dh.rows(); ++t) {
    dx.middleRows(t * steps, steps).rowwise() = dh.row(t) / static_cast<double>(steps);
  }
  for (std::size_t b = encoder_blocks_.size(); b-- > 0;) {
    dx = encoder_blocks_[b].backward(params_, ec.blocks[b], ec.conv2_shape, dx, grads);
  }
  const Mat dpre2 = layers::gelu_backward(ec.pre2, dx);
  const Mat dact1 = conv2_.backward(params_, ec.act1, ec.conv1_shape, ec.strides.conv2, dpre2, grads);
  const Mat dpre1 = layers::gelu_backward(ec.pre1, dact1);
  conv1_.backward(params_, ec.input, ec.input_shape, ec.strides.conv1, dpre1, grads, false);
}

Model::RecordTokens Model::encode_record(const LabeledRecord& record, std::size_t chunk_epochs) const {
  const std::size_t spe = record.samples_per_epoch();
  const std::size_t epochs = record.num_epochs();
  const RunMode mode{};
  RecordTokens out;
  out.tokens.resize(static_cast<Eigen::Index>(epochs * kTokensPerEpoch), static_cast<Eigen::Index>(config_.model_dim));
  chunk_epochs = std::max<std::size_t>(1, chunk_epochs);
  for (std::size_t first = 0; first < epochs; first += chunk_epochs) {
    const std::size_t count = std::min(chunk_epochs, epochs - first);
    const auto chunk = std::span<const double>(record.samples).subspan(first * spe, count * spe);
    out.tokens.middleRows(static_cast<Eigen::Index>(first * kTokensPerEpoch),
                          static_cast<Eigen::Index>(count * kTokensPerEpoch)) = encode_epochs(chunk, spe, mode);
  }
  const std::vector<double> zeros(spe, 0.0);
  out.pad_tokens = encode_epochs(zeros, spe, mode);
  return out;
}

}  // namespace s4sleep
