#include "s4sleep/conv.hpp"

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace s4sleep::conv {
namespace {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
using RealBuffer = std::unique_ptr<double, FftwFree>;
using ComplexBuffer = std::unique_ptr<fftw_complex, FftwFree>;

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

// FFTW planning is not thread-safe; executing a finished plan on new arrays is.
class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [n, p] : plans_) {
      fftw_destroy_plan(p.forward);
      fftw_destroy_plan(p.inverse);
    }
  }

  PlanPair get(std::size_t n) {
    std::lock_guard lock(mutex_);
    if (auto it = plans_.find(n); it != plans_.end()) return it->second;
    RealBuffer real(fftw_alloc_real(n));
    ComplexBuffer spec(fftw_alloc_complex(n / 2 + 1));
    const int size = static_cast<int>(n);
    PlanPair p;
    p.forward = fftw_plan_dft_r2c_1d(size, real.get(), spec.get(), FFTW_ESTIMATE);
    p.inverse = fftw_plan_dft_c2r_1d(size, spec.get(), real.get(), FFTW_ESTIMATE);
    if (!p.forward || !p.inverse) throw std::runtime_error("FFTW planning failed");
    plans_.emplace(n, p);
    return p;
  }

 private:
  std::mutex mutex_;
  std::map<std::size_t, PlanPair> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

void check_sizes(std::span<const double> u, std::span<const double> k, std::span<double> y) {
  if (k.size() < u.size() || y.size() != u.size()) throw std::invalid_argument("causal_conv: size mismatch");
}

}  // namespace

std::size_t fft_size(std::size_t length) {
  std::size_t n = 1;
  while (n < 2 * length - 1) n <<= 1;
  return n;
}

void causal_conv_direct(std::span<const double> u, std::span<const double> k, std::span<double> y) {
  check_sizes(u, k, y);
  const std::size_t L = u.size();
  for (std::size_t l = 0; l < L; ++l) {
    double acc = 0.0;
    for (std::size_t j = 0; j <= l; ++j) acc += k[j] * u[l - j];
    y[l] = acc;
  }
}

void causal_conv_fft(std::span<const double> u, std::span<const double> k, std::span<double> y) {
  check_sizes(u, k, y);
  const std::size_t L = u.size();
  if (L == 0) return;
  const std::size_t n = fft_size(L);
  const std::size_t bins = n / 2 + 1;
  const PlanPair plan = plan_cache().get(n);

  RealBuffer buf(fftw_alloc_real(n));
  ComplexBuffer fu(fftw_alloc_complex(bins));
  ComplexBuffer fk(fftw_alloc_complex(bins));

  std::fill(buf.get(), buf.get() + n, 0.0);
  std::copy(u.begin(), u.end(), buf.get());
  fftw_execute_dft_r2c(plan.forward, buf.get(), fu.get());
  std::fill(buf.get(), buf.get() + n, 0.0);
  std::copy(k.begin(), k.begin() + static_cast<std::ptrdiff_t>(L), buf.get());
  fftw_execute_dft_r2c(plan.forward, buf.get(), fk.get());

  auto* a = reinterpret_cast<std::complex<double>*>(fu.get());
  const auto* b = reinterpret_cast<const std::complex<double>*>(fk.get());
  for (std::size_t i = 0; i < bins; ++i) a[i] *= b[i];
  fftw_execute_dft_c2r(plan.inverse, fu.get(), buf.get());

  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t l = 0; l < L; ++l) y[l] = buf.get()[l] * scale;
}

void causal_conv(std::span<const double> u, std::span<const double> k, std::span<double> y) {
  if (u.size() >= kFftThreshold) {
    causal_conv_fft(u, k, y);
  } else {
    causal_conv_direct(u, k, y);
  }
}

void causal_corr(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  const std::size_t L = a.size();
  if (b.size() < L || out.size() != L) throw std::invalid_argument("causal_corr: size mismatch");
  if (L < kFftThreshold) {
    for (std::size_t m = 0; m < L; ++m) {
      double acc = 0.0;
      for (std::size_t l = m; l < L; ++l) acc += a[l] * b[l - m];
      out[m] = acc;
    }
    return;
  }
  std::vector<double> reversed(a.rbegin(), a.rend());
  causal_conv_fft(reversed, b, out);
  std::reverse(out.begin(), out.end());
}

}  // namespace s4sleep::conv
