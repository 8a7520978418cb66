#pragma once

#include "d2r/routing/kernels.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2r::sacmt {

inline constexpr double kDefaultMaskoutThreshold = 3e3;

/// w_T = exp(-alpha_T) / sum_j exp(-alpha_j).
inline std::vector<double> task_loss_weights(std::span<const double> alphas) {
  if (alphas.empty()) throw std::invalid_argument("task_loss_weights: no tasks");
  std::vector<double> neg(alphas.size());
  for (std::size_t t = 0; t < alphas.size(); ++t) {
    if (!std::isfinite(alphas[t]))
      throw std::invalid_argument("task_loss_weights: alpha[" + std::to_string(t) + "] is not finite");
    neg[t] = -alphas[t];
  }
  return routing::softmax(neg);
}

/// Flags tasks whose loss is not above the threshold. A task exactly at the
/// threshold stays included.
inline std::vector<bool> loss_maskout(std::span<const double> losses, double threshold = kDefaultMaskoutThreshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("loss_maskout: threshold must be > 0");
  std::vector<bool> keep(losses.size());
  for (std::size_t t = 0; t < losses.size(); ++t) keep[t] = !(losses[t] > threshold) && !std::isnan(losses[t]);
  return keep;
}

inline bool any_included(const std::vector<bool>& keep) {
  for (bool k : keep)
    if (k) return true;
  return false;
}

/// Derived per-task quantities for one step.
struct TaskTemperatures {
  std::vector<double> alpha;
  std::vector<double> tau;
  std::vector<double> weight;

  /// `route_balancing` / `loss_weighting` off give tau = 1 and uniform w.
  static TaskTemperatures from_log_alpha(std::span<const double> log_alpha, bool route_balancing, bool loss_weighting) {
    TaskTemperatures t;
    for (double la : log_alpha) t.alpha.push_back(std::exp(la));
    const auto n = t.alpha.size();
    t.tau = route_balancing ? routing::route_balance_temperatures(t.alpha) : std::vector<double>(n, 1.0);
    t.weight = loss_weighting ? task_loss_weights(t.alpha) : std::vector<double>(n, 1.0 / static_cast<double>(n));
    return t;
  }
};

}  // namespace d2r::sacmt
