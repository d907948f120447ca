#include "s4sleep/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace s4sleep {

AdamWState AdamWState::zeros(const ParameterSet& params) {
  return AdamWState{0, GradientSet(params), GradientSet(params)};
}

bool AdamWState::matches(const ParameterSet& params) const {
  if (m.size() != params.size() || v.size() != params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m.at(i).size() != params.values(i).size() || v.at(i).size() != params.values(i).size()) return false;
  }
  return true;
}

void adamw_step(ParameterSet& params, const GradientSet& grads, AdamWState& state, const AdamWOptions& o) {
  if (grads.size() != params.size()) throw std::invalid_argument("gradient layout does not match parameters");
  if (!state.matches(params)) state = AdamWState::zeros(params);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params.mutable_values(i);
    const auto g = grads.at(i);
    auto m = state.m.at(i);
    auto v = state.v.at(i);
    if (g.size() != theta.size()) throw std::invalid_argument("gradient block size mismatch");
    const double decay = params.info(i).decay ? o.learning_rate * o.weight_decay : 0.0;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      theta[k] -= decay * theta[k];
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      theta[k] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

}  // namespace s4sleep
