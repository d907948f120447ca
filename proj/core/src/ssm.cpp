#include "s4sleep/ssm.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "s4sleep/conv.hpp"

namespace s4sleep::ssm {
namespace {

// phi(z) = (e^z - 1) / z and its derivative; series near 0 avoids cancellation.
struct Phi {
  cplx value;
  cplx derivative;
};

Phi phi(cplx z) {
  if (std::abs(z) < 0.1) {
    cplx value = 0.0;
    cplx derivative = 0.0;
    cplx power = 1.0;  // z^k
    double factorial = 1.0;  // (k+1)!
    for (int k = 0; k < 16; ++k) {
      factorial *= static_cast<double>(k + 1);
      value += power / factorial;
      if (k + 1 < 16) derivative += static_cast<double>(k + 1) * power / (factorial * static_cast<double>(k + 2));
      power *= z;
    }
    return {value, derivative};
  }
  const cplx ez = std::exp(z);
  return {(ez - 1.0) / z, (ez * (z - 1.0) + 1.0) / (z * z)};
}

struct StateTerms {
  cplx a_bar;
  cplx b_bar;
  cplx phi;
  cplx dphi;
  double dt;
};

StateTerms state_terms(const S4LayerParams& p, std::size_t h, std::size_t n) {
  const std::size_t i = p.index(h, n);
  const cplx lambda = p.lambda[i];
  if (!(lambda.real() < 0.0)) {
    throw SsmError(SsmErrc::UnstablePole, "unstable pole at channel " + std::to_string(h) + ", state " +
                                              std::to_string(n) + ": Re(lambda) = " + std::to_string(lambda.real()));
  }
  const double dt = std::exp(p.log_dt[h]);
  StateTerms t;
  t.dt = dt;
  t.a_bar = std::exp(dt * lambda);
  if (std::abs(lambda) < kSmallPole) {
    t.phi = 1.0;
    t.dphi = 0.5;
  } else {
    const Phi f = phi(dt * lambda);
    t.phi = f.value;
    t.dphi = f.derivative;
  }
  t.b_bar = dt * p.b[i] * t.phi;
  return t;
}

void check_signal(const S4LayerParams& p, std::span<const double> u, std::size_t length) {
  if (u.size() != p.channels * length) {
    throw SsmError(SsmErrc::ShapeMismatch, "signal has " + std::to_string(u.size()) + " values, expected " +
                                               std::to_string(p.channels) + " x " + std::to_string(length));
  }
}

}  // namespace

S4LayerParams S4LayerParams::initialize(std::size_t channels, std::size_t states, Rng& rng, double dt_min,
                                        double dt_max) {
  S4LayerParams p;
  p.channels = channels;
  p.states = states;
  const std::size_t total = channels * states;
  p.lambda.resize(total);
  p.b.assign(total, cplx(1.0, 0.0));
  p.c.resize(total);
  p.d.resize(channels);
  p.log_dt.resize(channels);
  const double half = std::sqrt(0.5);
  for (std::size_t h = 0; h < channels; ++h) {
    for (std::size_t n = 0; n < states; ++n) {
      p.lambda[p.index(h, n)] = cplx(-0.5, std::numbers::pi * static_cast<double>(n));
      const double re = rng.normal();
      p.c[p.index(h, n)] = cplx(half * re, half * rng.normal());
    }
    p.d[h] = rng.normal();
    p.log_dt[h] = rng.uniform(std::log(dt_min), std::log(dt_max));
  }
  return p;
}

void S4LayerParams::check_shapes() const {
  const std::size_t total = channels * states;
  if (lambda.size() != total || b.size() != total || c.size() != total || d.size() != channels ||
      log_dt.size() != channels) {
    throw SsmError(SsmErrc::ShapeMismatch, "S4 parameter arrays do not match channels x states");
  }
}

Discretized discretize(const S4LayerParams& params) {
  params.check_shapes();
  Discretized out;
  out.a_bar.resize(params.lambda.size());
  out.b_bar.resize(params.lambda.size());
  for (std::size_t h = 0; h < params.channels; ++h) {
    for (std::size_t n = 0; n < params.states; ++n) {
      const StateTerms t = state_terms(params, h, n);
      out.a_bar[params.index(h, n)] = t.a_bar;
      out.b_bar[params.index(h, n)] = t.b_bar;
    }
  }
  return out;
}

DiscreteKernel materialize_kernel(const S4LayerParams& params, std::size_t length) {
  DiscreteKernel kernel;
  kernel.channels = params.channels;
  kernel.length = length;
  kernel.zoh = discretize(params);
  kernel.k.assign(params.channels * length, 0.0);
  std::vector<cplx> acc(length);
  for (std::size_t h = 0; h < params.channels; ++h) {
    std::fill(acc.begin(), acc.end(), cplx(0.0));
    for (std::size_t n = 0; n < params.states; ++n) {
      const std::size_t i = params.index(h, n);
      const cplx a = kernel.zoh.a_bar[i];
      cplx term = params.c[i] * kernel.zoh.b_bar[i];
      for (std::size_t l = 0; l < length; ++l) {
        acc[l] += term;
        term *= a;
      }
    }
    for (std::size_t l = 0; l < length; ++l) kernel.k[h * length + l] = acc[l].real();
  }
  return kernel;
}

std::vector<double> apply_recurrence(const S4LayerParams& params, std::span<const double> u, std::size_t length) {
  check_signal(params, u, length);
  const Discretized zoh = discretize(params);
  std::vector<double> y(u.size());
  std::vector<cplx> x(params.states);
  for (std::size_t h = 0; h < params.channels; ++h) {
    std::fill(x.begin(), x.end(), cplx(0.0));
    for (std::size_t l = 0; l < length; ++l) {
      const double input = u[h * length + l];
      double out = params.d[h] * input;
      for (std::size_t n = 0; n < params.states; ++n) {
        const std::size_t i = params.index(h, n);
        x[n] = zoh.a_bar[i] * x[n] + zoh.b_bar[i] * input;
        out += (params.c[i] * x[n]).real();
      }
      y[h * length + l] = out;
    }
  }
  return y;
}

std::vector<double> apply_fft(const S4LayerParams& params, std::span<const double> u, std::size_t length) {
  check_signal(params, u, length);
  const DiscreteKernel kernel = materialize_kernel(params, length);
  std::vector<double> y(u.size());
  for (std::size_t h = 0; h < params.channels; ++h) {
    const auto uh = u.subspan(h * length, length);
    auto yh = std::span<double>(y).subspan(h * length, length);
    conv::causal_conv_fft(uh, kernel.channel(h), yh);
    for (std::size_t l = 0; l < length; ++l) yh[l] += params.d[h] * uh[l];
  }
  return y;
}

S4LayerGrads S4LayerGrads::zeros(const S4LayerParams& params, std::size_t input_size) {
  S4LayerGrads g;
  g.lambda.assign(params.lambda.size(), cplx(0.0));
  g.b.assign(params.b.size(), cplx(0.0));
  g.c.assign(params.c.size(), cplx(0.0));
  g.d.assign(params.channels, 0.0);
  g.log_dt.assign(params.channels, 0.0);
  g.u.assign(input_size, 0.0);
  return g;
}

void kernel_backward(const S4LayerParams& params, const DiscreteKernel& kernel, std::span<const double> dk,
                     S4LayerGrads& grads) {
  const std::size_t L = kernel.length;
  if (dk.size() != params.channels * L) throw SsmError(SsmErrc::ShapeMismatch, "kernel gradient has wrong size");
  for (std::size_t h = 0; h < params.channels; ++h) {
    const auto g = dk.subspan(h * L, L);
    double grad_dt = 0.0;
    for (std::size_t n = 0; n < params.states; ++n) {
      const std::size_t i = params.index(h, n);
      const StateTerms t = state_terms(params, h, n);
      // G = sum_l g_l a^l,  H = sum_l g_l l a^(l-1)
      cplx G = 0.0;
      cplx H = 0.0;
      cplx power = 1.0;
      cplx previous = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        G += g[l] * power;
        if (l > 0) H += g[l] * static_cast<double>(l) * previous;
        previous = power;
        power *= t.a_bar;
      }
      const cplx c = params.c[i];
      const cplx lambda = params.lambda[i];
      const cplx w = c * t.b_bar;
      const cplx grad_w = std::conj(G);
      const cplx grad_b_bar = grad_w * std::conj(c);
      const cplx grad_a_bar = std::conj(w * H);
      grads.c[i] += grad_w * std::conj(t.b_bar);
      grads.b[i] += grad_b_bar * std::conj(t.dt * t.phi);
      const cplx grad_z = grad_b_bar * std::conj(t.dt * params.b[i] * t.dphi) + grad_a_bar * std::conj(t.a_bar);
      grads.lambda[i] += grad_z * t.dt;
      grad_dt += (std::conj(grad_b_bar) * (params.b[i] * t.phi)).real() + (std::conj(grad_z) * lambda).real();
    }
    grads.log_dt[h] += grad_dt * std::exp(params.log_dt[h]);
  }
}

S4LayerGrads layer_gradients(const S4LayerParams& params, std::span<const double> u, std::span<const double> dy,
                             std::size_t length) {
  check_signal(params, u, length);
  check_signal(params, dy, length);
  const DiscreteKernel kernel = materialize_kernel(params, length);
  S4LayerGrads grads = S4LayerGrads::zeros(params, u.size());
  std::vector<double> dk(params.channels * length);
  for (std::size_t h = 0; h < params.channels; ++h) {
    const auto uh = u.subspan(h * length, length);
    const auto dyh = dy.subspan(h * length, length);
    auto duh = std::span<double>(grads.u).subspan(h * length, length);
    conv::causal_corr(dyh, kernel.channel(h), duh);
    double dd = 0.0;
    for (std::size_t l = 0; l < length; ++l) {
      duh[l] += params.d[h] * dyh[l];
      dd += dyh[l] * uh[l];
    }
    grads.d[h] = dd;
    conv::causal_corr(dyh, uh, std::span<double>(dk).subspan(h * length, length));
  }
  kernel_backward(params, kernel, dk, grads);
  return grads;
}

}  // namespace s4sleep::ssm
