#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <utility>
#include <vector>

#include "s4sleep/error.hpp"
#include "s4sleep/random.hpp"

namespace s4sleep::ssm {

enum class SsmErrc { UnstablePole, ShapeMismatch };
using SsmError = CodedError<SsmErrc>;

using cplx = std::complex<double>;

// Below this |lambda| the zero-order-hold input weight uses its limit dt*b.
inline constexpr double kSmallPole = 1e-12;

// Diagonal state space layer, one independent SSM per channel:
//   x' = lambda x + b u,  y = Re(c x) + d u
// with per-channel timescale dt = exp(log_dt). Complex arrays are laid out
// channel-major: index h * states + n.
struct S4LayerParams {
  std::size_t channels = 0;
  std::size_t states = 0;
  std::vector<cplx> lambda;
  std::vector<cplx> b;
  std::vector<cplx> c;
  std::vector<double> d;
  std::vector<double> log_dt;

  // lambda_n = -1/2 + i*pi*n, b = 1, c ~ N(0, 1) per real/imag part scaled to
  // unit variance, d ~ N(0, 1), dt log-uniform in [dt_min, dt_max].
  static S4LayerParams initialize(std::size_t channels, std::size_t states, Rng& rng, double dt_min = 1e-3,
                                  double dt_max = 1e-1);

  void check_shapes() const;
  std::size_t index(std::size_t h, std::size_t n) const { return h * states + n; }
};

struct Discretized {
  std::vector<cplx> a_bar;  // exp(dt * lambda)
  std::vector<cplx> b_bar;  // (a_bar - 1) / lambda * b
};

// Zero-order hold. Throws UnstablePole if any Re(lambda) >= 0.
Discretized discretize(const S4LayerParams& params);

// K[h][l] = Re(sum_n c[h][n] * a_bar[h][n]^l * b_bar[h][n]) for l < length.
// The skip term d is not part of K.
struct DiscreteKernel {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> k;  // channels x length
  Discretized zoh;

  std::span<const double> channel(std::size_t h) const {
    return std::span<const double>(k).subspan(h * length, length);
  }
};

DiscreteKernel materialize_kernel(const S4LayerParams& params, std::size_t length);

// Signals are channel-major: u[h * length + l].

// Sequential state recurrence; the reference the convolution path is checked against.
std::vector<double> apply_recurrence(const S4LayerParams& params, std::span<const double> u, std::size_t length);

// Kernel convolution through a zero-padded FFT plus the skip term.
std::vector<double> apply_fft(const S4LayerParams& params, std::span<const double> u, std::size_t length);

// Gradients of a scalar loss. Complex entries hold (dL/dRe, dL/dIm).
struct S4LayerGrads {
  std::vector<cplx> lambda;
  std::vector<cplx> b;
  std::vector<cplx> c;
  std::vector<double> d;
  std::vector<double> log_dt;
  std::vector<double> u;

  static S4LayerGrads zeros(const S4LayerParams& params, std::size_t input_size);
};

// Reverse mode through apply_fft given dL/dy.
S4LayerGrads layer_gradients(const S4LayerParams& params, std::span<const double> u, std::span<const double> dy,
                             std::size_t length);

// Chain rule from dL/dK back to lambda, b, c and log_dt; accumulates into `grads`.
void kernel_backward(const S4LayerParams& params, const DiscreteKernel& kernel, std::span<const double> dk,
                     S4LayerGrads& grads);

// Kernels keyed on (parameter version, length). Readers share the lock;
// inserting or invalidating takes it exclusively.
template <class Value>
class KernelCache {
 public:
  explicit KernelCache(std::size_t capacity = 8) : capacity_(capacity) {}

  template <class Make>
  std::shared_ptr<const Value> get(std::uint64_t version, std::size_t length, Make&& make) {
    const Key key{version, length};
    {
      std::shared_lock lock(mutex_);
      if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    auto value = std::make_shared<const Value>(make());
    std::unique_lock lock(mutex_);
    for (auto it = entries_.begin(); it != entries_.end();) {
      it = it->first.first != version ? entries_.erase(it) : std::next(it);
    }
    if (entries_.size() >= capacity_) entries_.erase(entries_.begin());
    return entries_.try_emplace(key, std::move(value)).first->second;
  }

  void clear() {
    std::unique_lock lock(mutex_);
    entries_.clear();
  }

 private:
  using Key = std::pair<std::uint64_t, std::size_t>;
  std::size_t capacity_;
  std::shared_mutex mutex_;
  std::map<Key, std::shared_ptr<const Value>> entries_;
};

}  // namespace s4sleep::ssm
