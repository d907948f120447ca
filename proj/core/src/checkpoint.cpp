#include "s4sleep/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace s4sleep {
namespace {

constexpr char kMagic[8] = {'S', '4', 'S', 'L', 'C', 'K', 'P', 'T'};

[[noreturn]] void bad(const std::string& msg) { throw NetworkError(NetworkErrc::BadCheckpoint, msg); }

template <class U>
void put_uint(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

void put_f64(std::ostream& out, double v) { put_uint(out, std::bit_cast<std::uint64_t>(v)); }

template <class U>
U get_uint(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) bad("checkpoint is truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_uint<std::uint64_t>(in)); }

std::string get_bytes(std::istream& in, std::uint64_t n) {
  if (n > (std::uint64_t{1} << 32)) bad("implausible field length in checkpoint");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) bad("checkpoint is truncated");
  return s;
}

void put_values(std::ostream& out, std::span<const double> values) {
  for (double v : values) put_f64(out, v);
}

void get_values(std::istream& in, std::span<double> values) {
  for (double& v : values) v = get_f64(in);
}

}  // namespace

void write_checkpoint(std::ostream& out, const Model& model, const CheckpointMeta& meta,
                      const AdamWState* optimizer) {
  const ParameterSet& params = model.parameters();
  out.write(kMagic, sizeof kMagic);
  put_uint<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = nlohmann::json(model.config()).dump();
  put_uint<std::uint64_t>(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  put_uint<std::uint64_t>(out, meta.stage_index);
  put_uint<std::uint64_t>(out, meta.input_epochs);
  put_f64(out, meta.best_val_f1);

  put_uint<std::uint64_t>(out, params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamInfo& info = params.info(i);
    put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(info.name.size()));
    out.write(info.name.data(), static_cast<std::streamsize>(info.name.size()));
    put_uint<std::uint8_t>(out, info.decay ? 1 : 0);
    put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(info.shape.size()));
    for (std::size_t d : info.shape) put_uint<std::uint64_t>(out, d);
    put_values(out, params.values(i));
  }

  const bool has_opt = optimizer != nullptr && optimizer->matches(params);
  put_uint<std::uint8_t>(out, has_opt ? 1 : 0);
  if (has_opt) {
    put_uint<std::uint64_t>(out, optimizer->step);
    for (std::size_t i = 0; i < params.size(); ++i) {
      put_values(out, optimizer->m.at(i));
      put_values(out, optimizer->v.at(i));
    }
  }
  if (!out) throw NetworkError(NetworkErrc::BadCheckpoint, "failed writing checkpoint");
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMeta& meta,
                     const AdamWState* optimizer) {
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) bad("cannot open " + tmp.string() + " for writing");
    write_checkpoint(out, model, meta, optimizer);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) bad("not a checkpoint file");
  const auto version = get_uint<std::uint32_t>(in);
  if (version != kCheckpointVersion) bad("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  const std::string config = get_bytes(in, get_uint<std::uint64_t>(in));
  try {
    ck.config = nlohmann::json::parse(config).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("checkpoint config: ") + e.what());
  }
  ck.meta.stage_index = get_uint<std::uint64_t>(in);
  ck.meta.input_epochs = get_uint<std::uint64_t>(in);
  ck.meta.best_val_f1 = get_f64(in);

  const auto blocks = get_uint<std::uint64_t>(in);
  for (std::uint64_t b = 0; b < blocks; ++b) {
    std::string name = get_bytes(in, get_uint<std::uint32_t>(in));
    const bool decay = get_uint<std::uint8_t>(in) != 0;
    const auto ndim = get_uint<std::uint32_t>(in);
    if (ndim > 8) bad("implausible rank for parameter " + name);
    std::vector<std::size_t> shape(ndim);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = get_uint<std::uint64_t>(in);
      numel *= d;
    }
    if (numel > (std::uint64_t{1} << 32)) bad("implausible size for parameter " + name);
    const ParamId id = ck.params.add(std::move(name), std::move(shape), decay);
    get_values(in, ck.params.mutable_values(id));
  }

  if (get_uint<std::uint8_t>(in) != 0) {
    AdamWState state = AdamWState::zeros(ck.params);
    state.step = get_uint<std::uint64_t>(in);
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      get_values(in, state.m.at(i));
      get_values(in, state.v.at(i));
    }
    ck.optimizer = std::move(state);
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bad("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

Model restore_model(const Checkpoint& checkpoint) {
  Model model(checkpoint.config);
  model.load_parameters(checkpoint.params);
  return model;
}

}  // namespace s4sleep
