#pragma once

// Reference computations used by the tests. Deliberately naive and written
// against the textbook formulas, not against the library code paths.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "s4sleep/ssm.hpp"

namespace s4sleep::oracle {

using cplx = std::complex<double>;

// y[l] = sum_{j<=l} a[j] b[l-j]
inline std::vector<double> causal_conv(std::span<const double> a, std::span<const double> b) {
  std::vector<double> y(a.size(), 0.0);
  for (std::size_t l = 0; l < a.size(); ++l) {
    for (std::size_t j = 0; j <= l && l - j < b.size(); ++j) y[l] += a[j] * b[l - j];
  }
  return y;
}

// Ā = exp(Δλ), B̄ = (Ā - 1)/λ · b, K_l = Re Σ c Ā^l B̄ with Ā^l from std::pow.
inline std::vector<double> kernel(const ssm::S4LayerParams& p, std::size_t h, std::size_t length) {
  std::vector<double> k(length, 0.0);
  const double dt = std::exp(p.log_dt[h]);
  for (std::size_t n = 0; n < p.states; ++n) {
    const std::size_t i = h * p.states + n;
    const cplx a = std::exp(dt * p.lambda[i]);
    const cplx b = std::abs(p.lambda[i]) < ssm::kSmallPole ? dt * p.b[i] : (a - 1.0) / p.lambda[i] * p.b[i];
    for (std::size_t l = 0; l < length; ++l) k[l] += (p.c[i] * std::pow(a, static_cast<double>(l)) * b).real();
  }
  return k;
}

// Five-point (Richardson-extrapolated central) difference of f at x.
inline double derivative(const std::function<double(double)>& f, double x, double h) {
  const double d1 = (f(x + h) - f(x - h)) / (2.0 * h);
  const double d2 = (f(x + h / 2) - f(x - h / 2)) / h;
  return (4.0 * d2 - d1) / 3.0;
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// |a - b| <= rel * max(|a|, |b|) + abs_floor
inline bool close(double a, double b, double rel, double abs_floor = 1e-9) {
  return std::fabs(a - b) <= rel * std::max(std::fabs(a), std::fabs(b)) + abs_floor;
}

// Frequency (in cycles per sample) of the largest DFT magnitude, DC excluded.
inline double spectral_peak(std::span<const double> x) {
  const std::size_t n = x.size();
  std::size_t best = 1;
  double best_power = -1.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    cplx acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n));
    }
    if (std::norm(acc) > best_power) {
      best_power = std::norm(acc);
      best = k;
    }
  }
  return static_cast<double>(best) / static_cast<double>(n);
}

}  // namespace s4sleep::oracle
