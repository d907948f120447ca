#include "s4sleep/layers.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "s4sleep/conv.hpp"

namespace s4sleep::layers {
namespace {

using cplx = std::complex<double>;

void fill_uniform(std::span<double> values, double bound, Rng& rng) {
  for (auto& v : values) v = rng.uniform(-bound, bound);
}

std::span<cplx> as_complex(std::span<double> v) {
  return {reinterpret_cast<cplx*>(v.data()), v.size() / 2};
}

std::span<const cplx> as_complex(std::span<const double> v) {
  return {reinterpret_cast<const cplx*>(v.data()), v.size() / 2};
}

void check_rows(const Mat& x, SeqShape shape, std::size_t cols, const char* what) {
  if (static_cast<std::size_t>(x.rows()) != shape.rows() || static_cast<std::size_t>(x.cols()) != cols) {
    throw std::invalid_argument(std::string(what) + ": activation shape mismatch");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Linear::Linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng)
    : in_(in), out_(out) {
  weight_ = params.add(prefix + ".weight", {in, out}, true);
  bias_ = params.add(prefix + ".bias", {out}, false);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  fill_uniform(params.mutable_values(weight_), bound, rng);
  fill_uniform(params.mutable_values(bias_), bound, rng);
}

Mat Linear::forward(const ParameterSet& params, const Mat& x) const {
  const ConstMatMap w(params.values(weight_).data(), static_cast<Eigen::Index>(in_), static_cast<Eigen::Index>(out_));
  const Eigen::Map<const RowVec> b(params.values(bias_).data(), static_cast<Eigen::Index>(out_));
  Mat y = x * w;
  y.rowwise() += b;
  return y;
}

Mat Linear::backward(const ParameterSet& params, const Mat& x, const Mat& dy, GradientSet& grads) const {
  const ConstMatMap w(params.values(weight_).data(), static_cast<Eigen::Index>(in_), static_cast<Eigen::Index>(out_));
  MatMap dw(grads[weight_].data(), static_cast<Eigen::Index>(in_), static_cast<Eigen::Index>(out_));
  Eigen::Map<RowVec> db(grads[bias_].data(), static_cast<Eigen::Index>(out_));
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  return dy * w.transpose();
}

// ---------------------------------------------------------------------------

Conv1d::Conv1d(ParameterSet& params, const std::string& prefix, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, Rng& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel) {
  weight_ = params.add(prefix + ".weight", {kernel, in_channels, out_channels}, true);
  bias_ = params.add(prefix + ".bias", {out_channels}, false);
  const double bound = 1.0 / std::sqrt(static_cast<double>(kernel * in_channels));
  fill_uniform(params.mutable_values(weight_), bound, rng);
  fill_uniform(params.mutable_values(bias_), bound, rng);
}

Mat Conv1d::im2col(const Mat& x, SeqShape shape, std::size_t stride) const {
  const std::size_t out_steps = output_steps(shape.steps, stride);
  const auto pad = static_cast<std::ptrdiff_t>((kernel_ - 1) / 2);
  Mat cols = Mat::Zero(static_cast<Eigen::Index>(shape.batch * out_steps), static_cast<Eigen::Index>(kernel_ * in_));
  for (std::size_t b = 0; b < shape.batch; ++b) {
    for (std::size_t t = 0; t < out_steps; ++t) {
      const auto row = static_cast<Eigen::Index>(b * out_steps + t);
      for (std::size_t j = 0; j < kernel_; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride) - pad + static_cast<std::ptrdiff_t>(j);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(shape.steps)) continue;
        cols.row(row).segment(static_cast<Eigen::Index>(j * in_), static_cast<Eigen::Index>(in_)) =
            x.row(static_cast<Eigen::Index>(b * shape.steps) + src);
      }
    }
  }
  return cols;
}

Mat Conv1d::forward(const ParameterSet& params, const Mat& x, SeqShape shape, std::size_t stride) const {
  check_rows(x, shape, in_, "conv1d");
  const ConstMatMap w(params.values(weight_).data(), static_cast<Eigen::Index>(kernel_ * in_),
                      static_cast<Eigen::Index>(out_));
  const Eigen::Map<const RowVec> b(params.values(bias_).data(), static_cast<Eigen::Index>(out_));
  Mat y = im2col(x, shape, stride) * w;
  y.rowwise() += b;
  return y;
}

Mat Conv1d::backward(const ParameterSet& params, const Mat& x, SeqShape shape, std::size_t stride, const Mat& dy,
                     GradientSet& grads, bool need_input_grad) const {
  const ConstMatMap w(params.values(weight_).data(), static_cast<Eigen::Index>(kernel_ * in_),
                      static_cast<Eigen::Index>(out_));
  MatMap dw(grads[weight_].data(), static_cast<Eigen::Index>(kernel_ * in_), static_cast<Eigen::Index>(out_));
  Eigen::Map<RowVec> db(grads[bias_].data(), static_cast<Eigen::Index>(out_));
  const Mat cols = im2col(x, shape, stride);
  dw.noalias() += cols.transpose() * dy;
  db += dy.colwise().sum();
  if (!need_input_grad) return {};

  const Mat dcols = dy * w.transpose();
  const std::size_t out_steps = output_steps(shape.steps, stride);
  const auto pad = static_cast<std::ptrdiff_t>((kernel_ - 1) / 2);
  Mat dx = Mat::Zero(x.rows(), x.cols());
  for (std::size_t b = 0; b < shape.batch; ++b) {
    for (std::size_t t = 0; t < out_steps; ++t) {
      const auto row = static_cast<Eigen::Index>(b * out_steps + t);
      for (std::size_t j = 0; j < kernel_; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride) - pad + static_cast<std::ptrdiff_t>(j);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(shape.steps)) continue;
        dx.row(static_cast<Eigen::Index>(b * shape.steps) + src) +=
            dcols.row(row).segment(static_cast<Eigen::Index>(j * in_), static_cast<Eigen::Index>(in_));
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
}

Mat gelu_backward(const Mat& x, const Mat& dy) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return x.binaryExpr(dy, [inv_sqrt_2pi](double v, double g) {
    const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    return g * (cdf + v * pdf);
  });
}

// ---------------------------------------------------------------------------

LayerNorm::LayerNorm(ParameterSet& params, const std::string& prefix, std::size_t dim) : dim_(dim) {
  gain_ = params.add(prefix + ".gain", {dim}, false);
  bias_ = params.add(prefix + ".bias", {dim}, false);
  auto g = params.mutable_values(gain_);
  std::fill(g.begin(), g.end(), 1.0);
}

Mat LayerNorm::forward(const ParameterSet& params, const Mat& x, Cache* cache) const {
  const auto d = static_cast<Eigen::Index>(dim_);
  const Eigen::Map<const RowVec> g(params.values(gain_).data(), d);
  const Eigen::Map<const RowVec> b(params.values(bias_).data(), d);
  const Vec mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  const Vec inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(dim_)) + kEps).rsqrt().matrix();
  Mat normalized = centered.array().colwise() * inv_std.array();
  Mat y = (normalized.array().rowwise() * g.array()).rowwise() + b.array();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
  }
  return y;
}

Mat LayerNorm::backward(const ParameterSet& params, const Cache& cache, const Mat& dy, GradientSet& grads) const {
  const auto d = static_cast<Eigen::Index>(dim_);
  const Eigen::Map<const RowVec> g(params.values(gain_).data(), d);
  Eigen::Map<RowVec> dg(grads[gain_].data(), d);
  Eigen::Map<RowVec> db(grads[bias_].data(), d);
  dg += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * g.array();
  const Vec mean_dxhat = dxhat.rowwise().mean();
  const Vec mean_dxhat_xhat = (dxhat.array() * cache.normalized.array()).rowwise().mean();
  Mat dx = (dxhat.colwise() - mean_dxhat).array() - cache.normalized.array().colwise() * mean_dxhat_xhat.array();
  return dx.array().colwise() * cache.inv_std.array();
}

// ---------------------------------------------------------------------------

S4Mixer::S4Mixer(ParameterSet& params, const std::string& prefix, std::size_t channels, std::size_t states,
                 bool bidirectional, Rng& rng)
    : channels_(channels),
      states_(states),
      bidirectional_(bidirectional),
      cache_(std::make_shared<ssm::KernelCache<Kernels>>()) {
  const int directions = bidirectional ? 2 : 1;
  for (int dir = 0; dir < directions; ++dir) {
    const std::string p = prefix + (dir == 0 ? ".fwd" : ".bwd");
    DirectionIds& ids = dirs_[dir];
    ids.lambda = params.add(p + ".lambda", {channels, states, 2}, false);
    ids.b = params.add(p + ".b", {channels, states, 2}, true);
    ids.c = params.add(p + ".c", {channels, states, 2}, true);
    ids.log_dt = params.add(p + ".log_dt", {channels}, false);

    const ssm::S4LayerParams init = ssm::S4LayerParams::initialize(channels, states, rng);
    auto lambda = as_complex(params.mutable_values(ids.lambda));
    auto b = as_complex(params.mutable_values(ids.b));
    auto c = as_complex(params.mutable_values(ids.c));
    auto log_dt = params.mutable_values(ids.log_dt);
    for (std::size_t i = 0; i < init.lambda.size(); ++i) {
      lambda[i] = cplx(std::log(-init.lambda[i].real()), init.lambda[i].imag());
      b[i] = init.b[i];
      c[i] = init.c[i];
    }
    std::copy(init.log_dt.begin(), init.log_dt.end(), log_dt.begin());
    if (dir == 0) {
      d_ = params.add(prefix + ".d", {channels}, true);
      auto d = params.mutable_values(d_);
      std::copy(init.d.begin(), init.d.end(), d.begin());
    }
  }
}

ssm::S4LayerParams S4Mixer::direction_params(const ParameterSet& params, int direction) const {
  const DirectionIds& ids = dirs_[direction];
  ssm::S4LayerParams p;
  p.channels = channels_;
  p.states = states_;
  const auto lambda = as_complex(params.values(ids.lambda));
  const auto b = as_complex(params.values(ids.b));
  const auto c = as_complex(params.values(ids.c));
  p.lambda.resize(lambda.size());
  for (std::size_t i = 0; i < lambda.size(); ++i) p.lambda[i] = cplx(-std::exp(lambda[i].real()), lambda[i].imag());
  p.b.assign(b.begin(), b.end());
  p.c.assign(c.begin(), c.end());
  const auto log_dt = params.values(ids.log_dt);
  p.log_dt.assign(log_dt.begin(), log_dt.end());
  if (direction == 0) {
    const auto d = params.values(d_);
    p.d.assign(d.begin(), d.end());
  } else {
    p.d.assign(channels_, 0.0);
  }
  return p;
}

std::shared_ptr<const S4Mixer::Kernels> S4Mixer::kernels(const ParameterSet& params, std::size_t length) const {
  return cache_->get(params.version(), length, [&] {
    Kernels k;
    k.forward_params = direction_params(params, 0);
    k.forward_kernel = ssm::materialize_kernel(k.forward_params, length);
    if (bidirectional_) {
      k.backward_params = direction_params(params, 1);
      k.backward_kernel = ssm::materialize_kernel(k.backward_params, length);
    }
    return k;
  });
}

Mat S4Mixer::forward(const ParameterSet& params, const Mat& x, SeqShape shape) const {
  check_rows(x, shape, channels_, "s4 mixer");
  const auto k = kernels(params, shape.steps);
  const auto d = params.values(d_);
  const std::size_t L = shape.steps;
  Mat y(x.rows(), x.cols());
  std::vector<double> u(L), out(L), tmp(L);
  for (std::size_t b = 0; b < shape.batch; ++b) {
    const auto base = static_cast<Eigen::Index>(b * L);
    for (std::size_t h = 0; h < channels_; ++h) {
      const auto col = static_cast<Eigen::Index>(h);
      for (std::size_t l = 0; l < L; ++l) u[l] = x(base + static_cast<Eigen::Index>(l), col);
      conv::causal_conv(u, k->forward_kernel.channel(h), out);
      if (bidirectional_) {
        conv::causal_corr(u, k->backward_kernel.channel(h), tmp);
        for (std::size_t l = 0; l < L; ++l) out[l] += tmp[l];
      }
      for (std::size_t l = 0; l < L; ++l) y(base + static_cast<Eigen::Index>(l), col) = out[l] + d[h] * u[l];
    }
  }
  return y;
}

void S4Mixer::scatter_grads(const ssm::S4LayerGrads& g, const ssm::S4LayerParams& p, const DirectionIds& ids,
                            GradientSet& grads) const {
  auto lambda = as_complex(grads[ids.lambda]);
  auto b = as_complex(grads[ids.b]);
  auto c = as_complex(grads[ids.c]);
  auto log_dt = grads[ids.log_dt];
  for (std::size_t i = 0; i < g.lambda.size(); ++i) {
    // Re(lambda) = -exp(theta)  =>  dL/dtheta = dL/dRe * Re(lambda)
    lambda[i] += cplx(g.lambda[i].real() * p.lambda[i].real(), g.lambda[i].imag());
    b[i] += g.b[i];
    c[i] += g.c[i];
  }
  for (std::size_t h = 0; h < channels_; ++h) log_dt[h] += g.log_dt[h];
}

Mat S4Mixer::backward(const ParameterSet& params, const Mat& x, SeqShape shape, const Mat& dy,
                      GradientSet& grads) const {
  check_rows(dy, shape, channels_, "s4 mixer backward");
  const auto k = kernels(params, shape.steps);
  const auto d = params.values(d_);
  auto dd = grads[d_];
  const std::size_t L = shape.steps;
  std::vector<double> dk_fwd(channels_ * L, 0.0);
  std::vector<double> dk_bwd(bidirectional_ ? channels_ * L : 0, 0.0);
  Mat dx(x.rows(), x.cols());
  std::vector<double> u(L), g(L), du(L), tmp(L);
  for (std::size_t b = 0; b < shape.batch; ++b) {
    const auto base = static_cast<Eigen::Index>(b * L);
    for (std::size_t h = 0; h < channels_; ++h) {
      const auto col = static_cast<Eigen::Index>(h);
      for (std::size_t l = 0; l < L; ++l) {
        u[l] = x(base + static_cast<Eigen::Index>(l), col);
        g[l] = dy(base + static_cast<Eigen::Index>(l), col);
      }
      conv::causal_corr(g, k->forward_kernel.channel(h), du);
      conv::causal_corr(g, u, tmp);
      for (std::size_t l = 0; l < L; ++l) dk_fwd[h * L + l] += tmp[l];
      if (bidirectional_) {
        conv::causal_conv(g, k->backward_kernel.channel(h), tmp);
        for (std::size_t l = 0; l < L; ++l) du[l] += tmp[l];
        conv::causal_corr(u, g, tmp);
        for (std::size_t l = 0; l < L; ++l) dk_bwd[h * L + l] += tmp[l];
      }
      double skip = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        dx(base + static_cast<Eigen::Index>(l), col) = du[l] + d[h] * g[l];
        skip += g[l] * u[l];
      }
      dd[h] += skip;
    }
  }

  auto fwd = ssm::S4LayerGrads::zeros(k->forward_params, 0);
  ssm::kernel_backward(k->forward_params, k->forward_kernel, dk_fwd, fwd);
  scatter_grads(fwd, k->forward_params, dirs_[0], grads);
  if (bidirectional_) {
    auto bwd = ssm::S4LayerGrads::zeros(k->backward_params, 0);
    ssm::kernel_backward(k->backward_params, k->backward_kernel, dk_bwd, bwd);
    scatter_grads(bwd, k->backward_params, dirs_[1], grads);
  }
  return dx;
}

// ---------------------------------------------------------------------------

S4Block::S4Block(ParameterSet& params, const std::string& prefix, std::size_t dim, std::size_t states,
                 bool bidirectional, double dropout, Rng& rng)
    : norm_(params, prefix + ".norm", dim),
      mixer_(params, prefix + ".s4", dim, states, bidirectional, rng),
      output_(params, prefix + ".out", dim, dim, rng),
      dropout_(dropout) {}

Mat S4Block::forward(const ParameterSet& params, const Mat& x, SeqShape shape, const RunMode& mode,
                     std::uint64_t dropout_stream, Cache* cache) const {
  LayerNorm::Cache norm_cache;
  Mat normalized = norm_.forward(params, x, &norm_cache);
  Mat mixed = mixer_.forward(params, normalized, shape);
  Mat activated = gelu(mixed);
  Mat out = output_.forward(params, activated);
  Mat mask;
  if (mode.training && dropout_ > 0.0) {
    Rng rng(derive_seed(mode.dropout_seed, dropout_stream));
    const double keep = 1.0 - dropout_;
    mask = Mat::NullaryExpr(out.rows(), out.cols(), [&] { return rng.uniform() < keep ? 1.0 / keep : 0.0; });
    out.array() *= mask.array();
  }
  Mat y = x + out;
  if (cache) {
    cache->input = x;
    cache->norm = std::move(norm_cache);
    cache->normalized = std::move(normalized);
    cache->mixed = std::move(mixed);
    cache->activated = std::move(activated);
    cache->dropout_mask = std::move(mask);
  }
  return y;
}

Mat S4Block::backward(const ParameterSet& params, const Cache& cache, SeqShape shape, const Mat& dy,
                      GradientSet& grads) const {
  Mat dout = dy;
  if (cache.dropout_mask.size() > 0) dout.array() *= cache.dropout_mask.array();
  const Mat dactivated = output_.backward(params, cache.activated, dout, grads);
  const Mat dmixed = gelu_backward(cache.mixed, dactivated);
  const Mat dnormalized = mixer_.backward(params, cache.normalized, shape, dmixed, grads);
  return norm_.backward(params, cache.norm, dnormalized, grads) + dy;
}

}  // namespace s4sleep::layers
