#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace s4sleep {

struct ParamId {
  std::size_t index = 0;
  bool operator==(const ParamId&) const = default;
};

struct ParamInfo {
  std::string name;
  std::vector<std::size_t> shape;
  bool decay = true;  // subject to decoupled weight decay

  std::size_t numel() const;
};

class GradientSet;

// Named, shaped blocks of doubles. Every mutable access bumps a process-wide
// unique version so derived caches (S4 kernels) can tell when to rebuild.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  ParamId add(std::string name, std::vector<std::size_t> shape, bool decay = true);

  std::size_t size() const { return info_.size(); }
  const ParamInfo& info(ParamId id) const { return info_.at(id.index); }
  const ParamInfo& info(std::size_t index) const { return info_.at(index); }
  std::optional<ParamId> find(std::string_view name) const;

  std::span<const double> values(ParamId id) const { return data_.at(id.index); }
  std::span<const double> values(std::size_t index) const { return data_.at(index); }
  std::span<double> mutable_values(ParamId id);
  std::span<double> mutable_values(std::size_t index);

  std::uint64_t version() const { return version_; }
  void touch();

  std::size_t total_size() const;
  GradientSet zeros_like() const;

 private:
  std::vector<ParamInfo> info_;
  std::vector<std::vector<double>> data_;
  std::uint64_t version_ = 0;
};

// Gradient buffers laid out like a ParameterSet.
class GradientSet {
 public:
  GradientSet() = default;
  explicit GradientSet(const ParameterSet& params);

  std::size_t size() const { return data_.size(); }
  std::span<double> operator[](ParamId id) { return data_.at(id.index); }
  std::span<const double> operator[](ParamId id) const { return data_.at(id.index); }
  std::span<double> at(std::size_t index) { return data_.at(index); }
  std::span<const double> at(std::size_t index) const { return data_.at(index); }

  void zero();
  void add(const GradientSet& other);
  void scale(double factor);

 private:
  std::vector<std::vector<double>> data_;
};

}  // namespace s4sleep
