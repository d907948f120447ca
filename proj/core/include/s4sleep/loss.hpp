#pragma once

#include <cstddef>
#include <span>

#include "s4sleep/dataset.hpp"
#include "s4sleep/tensor.hpp"

namespace s4sleep {

struct LossSum {
  double loss = 0.0;      // summed over scored epochs
  std::size_t count = 0;  // scored (non-EXCLUDED) epochs
  Mat grad;               // d(loss)/d(logits), same shape as the logits
};

// Focal loss -(1 - p_t)^gamma * log(p_t) summed over the non-EXCLUDED rows.
// EXCLUDED rows get exactly zero gradient.
LossSum focal_loss_sum(const Mat& logits, std::span<const StageLabel> labels, double gamma);

// Mean over scored rows; 0 with zero gradient when every row is EXCLUDED.
double focal_loss(const Mat& logits, std::span<const StageLabel> labels, double gamma, Mat* grad = nullptr);

double cross_entropy(const Mat& logits, std::span<const StageLabel> labels);

}  // namespace s4sleep
