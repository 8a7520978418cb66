#pragma once

#include "d2r/diffcore/tape.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace d2r::modnet {

using ad::Matrix;
using ad::NodeId;
using ad::Tape;

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct GaussianHead {
  NodeId mean = ad::kNoNode;
  NodeId log_std = ad::kNoNode;
};

/// Splits an actor output (rows x 2A) into mean and a log-std squashed into
/// [kLogStdMin, kLogStdMax] through tanh.
inline GaussianHead gaussian_head(Tape& tape, NodeId output, int action_dim) {
  if (tape.value(output).cols() != 2 * action_dim)
    throw std::invalid_argument("gaussian_head: actor output has " + std::to_string(tape.value(output).cols()) +
                                " columns, expected " + std::to_string(2 * action_dim));
  GaussianHead h;
  h.mean = tape.slice_cols(output, 0, action_dim);
  const NodeId raw = tape.tanh(tape.slice_cols(output, action_dim, action_dim));
  h.log_std = tape.add_scalar(tape.scale(tape.add_scalar(raw, 1.0), 0.5 * (kLogStdMax - kLogStdMin)), kLogStdMin);
  return h;
}

struct ActionSample {
  NodeId action = ad::kNoNode;    // tanh(u)
  NodeId log_prob = ad::kNoNode;  // (rows x 1), includes the tanh correction
};

/// Reparameterised tanh-squashed Gaussian sample u = mean + std * noise.
inline ActionSample sample_action(Tape& tape, const GaussianHead& head, const Matrix& noise) {
  const auto& mean = tape.value(head.mean);
  if (noise.rows() != mean.rows() || noise.cols() != mean.cols())
    throw std::invalid_argument("sample_action: noise is " + ad::shape_of(noise) + ", mean is " + ad::shape_of(mean));
  const NodeId u = tape.add(head.mean, tape.mul(tape.exp(head.log_std), tape.constant(noise)));
  const NodeId gauss = tape.gaussian_log_prob(u, head.mean, head.log_std);
  // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
  const NodeId correction =
      tape.scale(tape.add_scalar(tape.add(u, tape.softplus(tape.scale(u, -2.0))), -std::numbers::ln2), 2.0);
  ActionSample s;
  s.action = tape.tanh(u);
  s.log_prob = tape.add(gauss, tape.row_sum(correction));
  return s;
}

inline NodeId deterministic_action(Tape& tape, const GaussianHead& head) { return tape.tanh(head.mean); }

}  // namespace d2r::modnet
