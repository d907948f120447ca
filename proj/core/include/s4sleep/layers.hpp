#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>

#include "s4sleep/parameters.hpp"
#include "s4sleep/random.hpp"
#include "s4sleep/ssm.hpp"
#include "s4sleep/tensor.hpp"

namespace s4sleep::layers {

// Activations hold `batch` sequences of `steps` rows each, stacked.
struct SeqShape {
  std::size_t batch = 0;
  std::size_t steps = 0;

  std::size_t rows() const { return batch * steps; }
};

// y = x W + b with W stored (in x out).
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);

  Mat forward(const ParameterSet& params, const Mat& x) const;
  // Accumulates dW, db; returns dL/dx.
  Mat backward(const ParameterSet& params, const Mat& x, const Mat& dy, GradientSet& grads) const;

  ParamId weight() const { return weight_; }
  ParamId bias() const { return bias_; }

 private:
  ParamId weight_;
  ParamId bias_;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

// Strided 1-D convolution applied to each sequence independently, zero
// padded with (kernel-1)/2 leading samples; output length ceil(steps/stride).
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParameterSet& params, const std::string& prefix, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel, Rng& rng);

  static std::size_t output_steps(std::size_t steps, std::size_t stride) { return (steps + stride - 1) / stride; }

  Mat forward(const ParameterSet& params, const Mat& x, SeqShape shape, std::size_t stride) const;
  // Accumulates dW, db; returns dL/dx unless `need_input_grad` is false.
  Mat backward(const ParameterSet& params, const Mat& x, SeqShape shape, std::size_t stride, const Mat& dy,
               GradientSet& grads, bool need_input_grad = true) const;

  std::size_t kernel() const { return kernel_; }

 private:
  Mat im2col(const Mat& x, SeqShape shape, std::size_t stride) const;

  ParamId weight_;  // (kernel * in) x out
  ParamId bias_;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  std::size_t kernel_ = 0;
};

// Exact (erf) GELU.
Mat gelu(const Mat& x);
Mat gelu_backward(const Mat& x, const Mat& dy);

class LayerNorm {
 public:
  struct Cache {
    Mat normalized;
    Vec inv_std;
  };

  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& prefix, std::size_t dim);

  Mat forward(const ParameterSet& params, const Mat& x, Cache* cache) const;
  Mat backward(const ParameterSet& params, const Cache& cache, const Mat& dy, GradientSet& grads) const;

  static constexpr double kEps = 1e-5;

 private:
  ParamId gain_;
  ParamId bias_;
  std::size_t dim_ = 0;
};

// Channel-wise diagonal SSM over every sequence, optionally bidirectional
// (a second parameter set run on the time-reversed sequence, outputs summed).
// Parameter blocks per direction: lambda {H,N,2} holding (log(-Re), Im),
// b and c {H,N,2} as (Re, Im), log_dt {H}; one shared skip d {H}.
class S4Mixer {
 public:
  struct Kernels {
    ssm::S4LayerParams forward_params;
    ssm::S4LayerParams backward_params;
    ssm::DiscreteKernel forward_kernel;
    ssm::DiscreteKernel backward_kernel;
  };

  S4Mixer() = default;
  S4Mixer(ParameterSet& params, const std::string& prefix, std::size_t channels, std::size_t states,
          bool bidirectional, Rng& rng);

  Mat forward(const ParameterSet& params, const Mat& x, SeqShape shape) const;
  Mat backward(const ParameterSet& params, const Mat& x, SeqShape shape, const Mat& dy, GradientSet& grads) const;

  // Direction 0 is causal, 1 runs on the reversed sequence.
  ssm::S4LayerParams direction_params(const ParameterSet& params, int direction) const;
  bool bidirectional() const { return bidirectional_; }
  ParamId skip() const { return d_; }

 private:
  struct DirectionIds {
    ParamId lambda;
    ParamId b;
    ParamId c;
    ParamId log_dt;
  };

  std::shared_ptr<const Kernels> kernels(const ParameterSet& params, std::size_t length) const;
  void scatter_grads(const ssm::S4LayerGrads& g, const ssm::S4LayerParams& p, const DirectionIds& ids,
                     GradientSet& grads) const;

  DirectionIds dirs_[2];
  ParamId d_;
  std::size_t channels_ = 0;
  std::size_t states_ = 0;
  bool bidirectional_ = true;
  std::shared_ptr<ssm::KernelCache<Kernels>> cache_;
};

struct RunMode {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  bool check_finite = false;
};

// x + Dropout(Linear(GELU(S4(LayerNorm(x))))).
class S4Block {
 public:
  struct Cache {
    Mat input;
    LayerNorm::Cache norm;
    Mat normalized;
    Mat mixed;
    Mat activated;
    Mat dropout_mask;  // empty when dropout is inactive
  };

  S4Block() = default;
  S4Block(ParameterSet& params, const std::string& prefix, std::size_t dim, std::size_t states, bool bidirectional,
          double dropout, Rng& rng);

  Mat forward(const ParameterSet& params, const Mat& x, SeqShape shape, const RunMode& mode,
              std::uint64_t dropout_stream, Cache* cache) const;
  Mat backward(const ParameterSet& params, const Cache& cache, SeqShape shape, const Mat& dy,
               GradientSet& grads) const;

  const S4Mixer& mixer() const { return mixer_; }
  const Linear& output() const { return output_; }
  const LayerNorm& norm() const { return norm_; }

 private:
  LayerNorm norm_;
  S4Mixer mixer_;
  Linear output_;
  double dropout_ = 0.0;
};

}  // namespace s4sleep::layers
