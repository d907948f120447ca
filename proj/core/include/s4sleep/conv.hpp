#pragma once

#include <cstddef>
#include <span>

namespace s4sleep::conv {

// Sequences at least this long go through the FFT path in causal_conv.
inline constexpr std::size_t kFftThreshold = 64;

// y[l] = sum_{j<=l} k[j] * u[l-j] for l < u.size(). `k` needs at least
// u.size() taps; `y` is overwritten.
void causal_conv(std::span<const double> u, std::span<const double> k, std::span<double> y);
void causal_conv_direct(std::span<const double> u, std::span<const double> k, std::span<double> y);
// Zero-padded transform of length >= 2L-1, so the circular product is the
// linear convolution truncated to L.
void causal_conv_fft(std::span<const double> u, std::span<const double> k, std::span<double> y);

// out[m] = sum_{l>=m} a[l] * b[l-m]; the adjoint of causal_conv in either argument.
void causal_corr(std::span<const double> a, std::span<const double> b, std::span<double> out);

std::size_t fft_size(std::size_t length);

}  // namespace s4sleep::conv
