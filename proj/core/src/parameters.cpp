#include "s4sleep/parameters.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace s4sleep {
namespace {

std::uint64_t next_version() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace

std::size_t ParamInfo::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ParameterSet::ParameterSet(const ParameterSet& other)
    : info_(other.info_), data_(other.data_), version_(next_version()) {}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) {
    info_ = other.info_;
    data_ = other.data_;
    version_ = next_version();
  }
  return *this;
}

ParamId ParameterSet::add(std::string name, std::vector<std::size_t> shape, bool decay) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  ParamInfo info{std::move(name), std::move(shape), decay};
  data_.emplace_back(info.numel(), 0.0);
  info_.push_back(std::move(info));
  version_ = next_version();
  return ParamId{info_.size() - 1};
}

std::optional<ParamId> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < info_.size(); ++i) {
    if (info_[i].name == name) return ParamId{i};
  }
  return std::nullopt;
}

std::span<double> ParameterSet::mutable_values(ParamId id) { return mutable_values(id.index); }

std::span<double> ParameterSet::mutable_values(std::size_t index) {
  version_ = next_version();
  return data_.at(index);
}

void ParameterSet::touch() { version_ = next_version(); }

std::size_t ParameterSet::total_size() const {
  std::size_t n = 0;
  for (const auto& d : data_) n += d.size();
  return n;
}

GradientSet ParameterSet::zeros_like() const { return GradientSet(*this); }

GradientSet::GradientSet(const ParameterSet& params) {
  data_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) data_.emplace_back(params.values(i).size(), 0.0);
}

void GradientSet::zero() {
  for (auto& d : data_) std::fill(d.begin(), d.end(), 0.0);
}

void GradientSet::add(const GradientSet& other) {
  if (other.data_.size() != data_.size()) throw std::invalid_argument("gradient layouts differ");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    auto& dst = data_[i];
    const auto& src = other.data_[i];
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

void GradientSet::scale(double factor) {
  for (auto& d : data_) {
    for (auto& v : d) v *= factor;
  }
}

}  // namespace s4sleep
