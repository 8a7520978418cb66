#pragma once

#include "d2r/diffcore/tape.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2r::sacmt {

using ad::Matrix;
using ad::NodeId;
using ad::Tape;

inline void require_rows(Eigen::Index rows, const char* what) {
  if (rows == 0) throw std::invalid_argument(std::string(what) + ": empty batch");
}

/// Per-row value gathered from a per-task vector.
inline Matrix per_row(std::span<const int> tasks, std::span<const double> per_task) {
  Matrix out(static_cast<Eigen::Index>(tasks.size()), 1);
  for (std::size_t r = 0; r < tasks.size(); ++r) out(static_cast<Eigen::Index>(r), 0) = per_task[static_cast<std::size_t>(tasks[r])];
  return out;
}

/// Row weights w_T * include_T / n_T, so that a weighted sum of per-row
/// losses equals sum_T w_T * J_T over included tasks with J_T a task mean.
inline Matrix task_row_weights(std::span<const int> tasks, std::span<const double> weights,
                               const std::vector<bool>& include) {
  std::vector<int> counts(weights.size(), 0);
  for (int t : tasks) ++counts[static_cast<std::size_t>(t)];
  Matrix out(static_cast<Eigen::Index>(tasks.size()), 1);
  for (std::size_t r = 0; r < tasks.size(); ++r) {
    const auto t = static_cast<std::size_t>(tasks[r]);
    out(static_cast<Eigen::Index>(r), 0) = include[t] ? weights[t] / counts[t] : 0.0;
  }
  return out;
}

/// Mean of a (rows x 1) value per task; NaN for tasks absent from the batch.
inline std::vector<double> per_task_means(const Matrix& values, std::span<const int> tasks, int task_count) {
  std::vector<double> sum(static_cast<std::size_t>(task_count), 0.0);
  std::vector<int> n(static_cast<std::size_t>(task_count), 0);
  for (std::size_t r = 0; r < tasks.size(); ++r) {
    sum[static_cast<std::size_t>(tasks[r])] += values(static_cast<Eigen::Index>(r), 0);
    ++n[static_cast<std::size_t>(tasks[r])];
  }
  for (std::size_t t = 0; t < sum.size(); ++t) sum[t] = n[t] ? sum[t] / n[t] : std::nan("");
  return sum;
}

/// Per-row policy objective alpha_T * log pi - min Q.
inline NodeId actor_rows(Tape& t, NodeId log_prob, NodeId min_q, const Matrix& alpha_rows) {
  require_rows(t.value(log_prob).rows(), "actor_loss");
  return t.sub(t.mul(t.constant(alpha_rows), log_prob), min_q);
}

/// Soft Bellman target r + gamma (1 - done)(min Q'(s', a') - alpha_T log pi(a'|s')).
inline Matrix soft_bellman_target(const Matrix& rewards, const Matrix& dones, double gamma, const Matrix& min_q_next,
                                  const Matrix& alpha_rows, const Matrix& next_log_prob) {
  return rewards.array() + gamma * (1.0 - dones.array()) * (min_q_next.array() - alpha_rows.array() * next_log_prob.array());
}

/// Per-row squared Bellman error summed over both critics.
inline NodeId critic_rows(Tape& t, NodeId q1, NodeId q2, const Matrix& target) {
  require_rows(target.rows(), "critic_loss");
  const NodeId y = t.constant(target);
  return t.add(t.square(t.sub(q1, y)), t.square(t.sub(q2, y)));
}

/// Mean over rows of -alpha_T (log pi + target_entropy), differentiated with
/// respect to log alpha; `log_alpha_rows` is gathered per row.
inline NodeId alpha_objective(Tape& t, NodeId log_alpha_rows, const Matrix& log_prob, double target_entropy) {
  require_rows(log_prob.rows(), "alpha_loss");
  const Matrix shifted = (log_prob.array() + target_entropy).matrix();
  return t.scale(t.mean(t.mul(t.exp(log_alpha_rows), t.constant(shifted))), -1.0);
}

}  // namespace d2r::sacmt
