#include "config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <vector>

namespace s4sleep::cli {
namespace {

using nlohmann::json;

[[noreturn]] void type_error(const std::string& key, const std::string& expected) {
  throw ConfigError(ConfigErrc::TypeError, key, "config key '" + key + "' must be " + expected);
}

[[noreturn]] void invalid(const std::string& key, const std::string& msg) {
  throw ConfigError(ConfigErrc::InvalidValue, key, "config key '" + key + "': " + msg);
}

std::uint64_t as_uint(const std::string& key, const json& v) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    type_error(key, "a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double as_real(const std::string& key, const json& v) {
  if (!v.is_number()) type_error(key, "a number");
  return v.get<double>();
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) type_error(key, "true or false");
  return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) type_error(key, "a string");
  return v.get<std::string>();
}

std::vector<CurriculumStage> as_curriculum(const std::string& key, const json& v) {
  if (!v.is_array()) type_error(key, "a list of [input_epochs, training_epochs] pairs");
  std::vector<CurriculumStage> out;
  for (const auto& item : v) {
    if (!item.is_array() || item.size() != 2) type_error(key, "a list of [input_epochs, training_epochs] pairs");
    out.push_back({as_uint(key, item[0]), as_uint(key, item[1])});
  }
  return out;
}

struct KeySpec {
  const char* name;
  bool required;
  std::function<void(RunConfig&, const std::string&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

#define S4_UINT(NAME, FIELD) \
  KeySpec { NAME, false, [](RunConfig& c, const std::string& k, const json& v) { c.FIELD = as_uint(k, v); }, \
            [](const RunConfig& c) { return json(c.FIELD); } }
#define S4_REAL(NAME, FIELD) \
  KeySpec { NAME, false, [](RunConfig& c, const std::string& k, const json& v) { c.FIELD = as_real(k, v); }, \
            [](const RunConfig& c) { return json(c.FIELD); } }
#define S4_BOOL(NAME, FIELD) \
  KeySpec { NAME, false, [](RunConfig& c, const std::string& k, const json& v) { c.FIELD = as_bool(k, v); }, \
            [](const RunConfig& c) { return json(c.FIELD); } }

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"data_source", true, [](RunConfig& c, const std::string& k, const json& v) { c.data_source = as_string(k, v); },
       [](const RunConfig& c) { return json(c.data_source); }},
      {"output_dir", true, [](RunConfig& c, const std::string& k, const json& v) { c.output_dir = as_string(k, v); },
       [](const RunConfig& c) { return json(c.output_dir); }},
      {"channel", false, [](RunConfig& c, const std::string& k, const json& v) { c.channel = as_string(k, v); },
       [](const RunConfig& c) { return json(c.channel); }},
      S4_UINT("split_seed", split_seed),
      S4_BOOL("split_by_subject", split_by_subject),

      S4_UINT("synth_records", synth.n_records),
      S4_UINT("synth_epochs_per_record", synth.epochs_per_record),
      S4_REAL("synth_sampling_rate", synth.sampling_rate),
      S4_REAL("synth_correlation_length", synth.correlation_length),
      S4_UINT("synth_seed", synth.seed),
      S4_REAL("synth_amplitude", synth.amplitude),
      S4_REAL("synth_noise_std", synth.noise_std),
      S4_REAL("synth_frequency_jitter", synth.frequency_jitter),

      S4_UINT("model_dim", model.model_dim),
      S4_UINT("encoder_s4_layers", model.encoder_s4_layers),
      S4_UINT("predictor_s4_layers", model.predictor_s4_layers),
      S4_UINT("states_per_channel", model.states_per_channel),
      S4_UINT("conv1_channels", model.conv1.channels),
      S4_UINT("conv1_kernel", model.conv1.kernel),
      S4_UINT("conv1_stride", model.conv1.stride),
      S4_UINT("conv2_kernel", model.conv2.kernel),
      S4_UINT("conv2_stride", model.conv2.stride),
      S4_REAL("dropout", model.dropout),
      S4_BOOL("bidirectional", model.bidirectional),
      S4_UINT("init_seed", model.init_seed),

      S4_REAL("learning_rate", train.learning_rate),
      S4_UINT("effective_batch", train.effective_batch),
      S4_UINT("micro_batch", train.micro_batch),
      S4_REAL("focal_gamma", train.focal_gamma),
      S4_REAL("weight_decay", train.weight_decay),
      {"curriculum", false,
       [](RunConfig& c, const std::string& k, const json& v) { c.train.curriculum = as_curriculum(k, v); },
       [](const RunConfig& c) {
         json out = json::array();
         for (const auto& s : c.train.curriculum) out.push_back({s.input_epochs, s.training_epochs});
         return out;
       }},
      S4_UINT("seed", train.seed),
      S4_UINT("threads", train.threads),
      {"validation_windows", false,
       [](RunConfig& c, const std::string& k, const json& v) {
         const std::string s = as_string(k, v);
         if (s == "non_overlapping") {
           c.train.validation_windows = WindowScheme::NonOverlapping;
         } else if (s == "stride_one") {
           c.train.validation_windows = WindowScheme::StrideOne;
         } else {
           invalid(k, "expected \"non_overlapping\" or \"stride_one\"");
         }
       },
       [](const RunConfig& c) {
         return json(c.train.validation_windows == WindowScheme::StrideOne ? "stride_one" : "non_overlapping");
       }},

      S4_UINT("bootstrap_iterations", bootstrap_iterations),
      S4_UINT("bootstrap_seed", bootstrap_seed),
      {"resample_unit", false,
       [](RunConfig& c, const std::string& k, const json& v) {
         const std::string s = as_string(k, v);
         if (s == "record") {
           c.resample_unit = ResampleUnit::Record;
         } else if (s == "epoch") {
           c.resample_unit = ResampleUnit::Epoch;
         } else {
           invalid(k, "expected \"record\" or \"epoch\"");
         }
       },
       [](const RunConfig& c) { return json(c.resample_unit == ResampleUnit::Record ? "record" : "epoch"); }},
  };
  return table;
}

#undef S4_UINT
#undef S4_REAL
#undef S4_BOOL

}  // namespace

BootstrapOptions RunConfig::bootstrap() const {
  BootstrapOptions o;
  o.iterations = bootstrap_iterations;
  o.seed = bootstrap_seed;
  o.unit = resample_unit;
  return o;
}

RunConfig parse_config(const nlohmann::json& flat) {
  if (!flat.is_object()) throw ConfigError(ConfigErrc::TypeError, "", "config must be a JSON object");
  const auto& table = key_table();
  for (const auto& item : flat.items()) {
    const bool known = std::any_of(table.begin(), table.end(), [&](const KeySpec& k) { return item.key() == k.name; });
    if (!known) throw ConfigError(ConfigErrc::UnknownKey, item.key(), "unknown config key '" + item.key() + "'");
  }
  RunConfig c;
  for (const auto& spec : table) {
    const auto it = flat.find(spec.name);
    if (it == flat.end()) {
      if (spec.required) {
        throw ConfigError(ConfigErrc::MissingKey, spec.name, std::string("missing config key '") + spec.name + "'");
      }
      continue;
    }
    spec.set(c, spec.name, *it);
  }

  try {
    c.model.validate();
    c.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(ConfigErrc::InvalidValue, "", e.what());
  }
  if (c.data_source.empty()) invalid("data_source", "must not be empty");
  if (c.output_dir.empty()) invalid("output_dir", "must not be empty");
  if (c.bootstrap_iterations == 0) invalid("bootstrap_iterations", "must be positive");
  if (c.train.threads == 0) invalid("threads", "must be positive");
  return c;
}

nlohmann::json effective_config(const RunConfig& config) {
  json out = json::object();
  for (const auto& spec : key_table()) out[spec.name] = spec.get(config);
  return out;
}

void apply_override(nlohmann::json& flat, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(ConfigErrc::InvalidValue, std::string(assignment),
                      "override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  flat[key] = std::move(value);
}

RunConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(ConfigErrc::Io, "", "cannot open config " + path.string());
  json flat = json::parse(in, nullptr, false);
  if (flat.is_discarded()) throw ConfigError(ConfigErrc::Io, "", "config " + path.string() + " is not valid JSON");
  for (const auto& o : overrides) apply_override(flat, o);
  return parse_config(flat);
}

RunConfig load_config(std::span<const std::string> overrides) {
  json flat = json::object();
  for (const auto& o : overrides) apply_override(flat, o);
  return parse_config(flat);
}

}  // namespace s4sleep::cli
