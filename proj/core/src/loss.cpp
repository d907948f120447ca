#include "s4sleep/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace s4sleep {
namespace {

void check_shapes(const Mat& logits, std::span<const StageLabel> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size() || logits.cols() != static_cast<Eigen::Index>(kNumStages)) {
    throw std::invalid_argument("logits must be (epochs x 5) with one label per row");
  }
}

}  // namespace

LossSum focal_loss_sum(const Mat& logits, std::span<const StageLabel> labels, double gamma) {
  check_shapes(logits, labels);
  LossSum out;
  out.grad = Mat::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const StageLabel label = labels[static_cast<std::size_t>(r)];
    if (!is_scoreable(label)) continue;
    const auto t = static_cast<Eigen::Index>(class_index(label));
    const double peak = logits.row(r).maxCoeff();
    const RowVec shifted = logits.row(r).array() - peak;
    const double log_z = std::log(shifted.array().exp().sum());
    const RowVec p = (shifted.array() - log_z).exp();
    const double log_pt = shifted(t) - log_z;
    const double pt = std::exp(log_pt);
    const double q = -std::expm1(log_pt);  // 1 - p_t without cancellation

    out.loss += -std::pow(q, gamma) * log_pt;
    ++out.count;

    // dl/dz_k = c * (delta_kt - p_k) with c = p_t * dl/dp_t
    double c = 0.0;
    if (q > 0.0) {
      c = gamma * pt * std::pow(q, gamma - 1.0) * log_pt - std::pow(q, gamma);
    } else if (gamma == 0.0) {
      c = -1.0;
    }
    RowVec g = -c * p;
    g(t) += c;
    out.grad.row(r) = g;
  }
  return out;
}

double focal_loss(const Mat& logits, std::span<const StageLabel> labels, double gamma, Mat* grad) {
  LossSum s = focal_loss_sum(logits, labels, gamma);
  if (s.count == 0) {
    if (grad) *grad = Mat::Zero(logits.rows(), logits.cols());
    return 0.0;
  }
  const double n = static_cast<double>(s.count);
  if (grad) *grad = s.grad / n;
  return s.loss / n;
}

double cross_entropy(const Mat& logits, std::span<const StageLabel> labels) {
  check_shapes(logits, labels);
  double total = 0.0;
  std::size_t count = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const StageLabel label = labels[static_cast<std::size_t>(r)];
    if (!is_scoreable(label)) continue;
    const double peak = logits.row(r).maxCoeff();
    const double log_z = peak + std::log((logits.row(r).array() - peak).exp().sum());
    total += log_z - logits(r, static_cast<Eigen::Index>(class_index(label)));
    ++count;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace s4sleep
