#pragma once

#include <cstdint>

#include "s4sleep/parameters.hpp"

namespace s4sleep {

struct AdamWOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::uint64_t step = 0;
  GradientSet m;
  GradientSet v;

  static AdamWState zeros(const ParameterSet& params);
  bool matches(const ParameterSet& params) const;
};

// Decoupled decay (theta -= lr * wd * theta, only on blocks flagged for
// decay) followed by the bias-corrected Adam update.
void adamw_step(ParameterSet& params, const GradientSet& grads, AdamWState& state, const AdamWOptions& options);

}  // namespace s4sleep
