#pragma once

#include "d2r/diffcore/tape.hpp"
#include "d2r/modnet/policy.hpp"
#include "d2r/routing/mask.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2r::modnet {

using ad::kNoNode;
using ad::NodeId;
using ad::Tape;
using routing::RoutingMask;

/// Records parameters of one policy onto a tape on first use.
class Binder {
 public:
  Binder(Tape& tape, const ModulePolicy& policy, bool track = true)
      : tape_(&tape), policy_(&policy), track_(track), ids_(policy.parameters().size(), kNoNode) {}

  NodeId operator()(std::size_t param) {
    auto& id = ids_.at(param);
    if (id == kNoNode) id = tape_->parameter(policy_->parameters(), param, track_);
    return id;
  }

  NodeId linear(NodeId x, const Linear& l) { return tape_->affine(x, (*this)(l.weight), (*this)(l.bias)); }

  Tape& tape() { return *tape_; }
  const ModulePolicy& policy() const { return *policy_; }

 private:
  Tape* tape_;
  const ModulePolicy* policy_;
  bool track_;
  std::vector<NodeId> ids_;
};

/// Which gradient paths are cut for sources the current routing finds unsuitable.
///  - kNone: plain composition.
///  - kResidual: rsg; the source's own transform is frozen, its residual input is not.
///  - kFull: sg on the whole source output.
enum class Blocking { kNone, kResidual, kFull };

/// Suitability threshold of module i (0-based): 1 / (i + 1), i.e. one over the
/// module's 1-based position.
inline double suitability_threshold(int module) { return 1.0 / static_cast<double>(module + 1); }

struct RoutingPass {
  NodeId representation = kNoNode;  // F(x)
  NodeId routing_input = kNoNode;   // F(x) .* H(T), or H(T) without state routing
  std::vector<NodeId> logits;       // logits[i]: (rows x i); logits[0] unused
  Eigen::Index rows = 0;
};

/// Routing logits from given state and task representations:
/// z_i = G_i(state_repr .* task_repr).
inline std::vector<NodeId> route_logits(Binder& p, NodeId routing_input) {
  const auto& policy = p.policy();
  Tape& tape = p.tape();
  std::vector<NodeId> logits(static_cast<std::size_t>(policy.modules()), kNoNode);
  for (int i = 1; i < policy.modules(); ++i) {
    const auto& layers = policy.router(i);
    NodeId h = routing_input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = p.linear(h, layers[l]);
      if (l + 1 < layers.size()) h = tape.relu(h);
    }
    logits[static_cast<std::size_t>(i)] = h;
  }
  return logits;
}

inline NodeId combine_representations(Tape& tape, NodeId state_repr, NodeId task_repr, bool state_routing) {
  const auto& s = tape.value(state_repr);
  const auto& t = tape.value(task_repr);
  if (s.rows() != t.rows() || s.cols() != t.cols())
    throw std::invalid_argument("route_logits: state representation " + ad::shape_of(s) +
                                " and task representation " + ad::shape_of(t) + " differ");
  return state_routing ? tape.mul(state_repr, task_repr) : task_repr;
}

/// Encoder, task embedding and all routing logits for a batch of inputs.
inline RoutingPass route(Binder& p, NodeId input, std::span<const int> tasks) {
  const auto& policy = p.policy();
  Tape& tape = p.tape();
  const auto& x = tape.value(input);
  if (x.cols() != policy.input_dim())
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) + " features, network expects " +
                                std::to_string(policy.input_dim()));
  if (static_cast<Eigen::Index>(tasks.size()) != x.rows())
    throw std::invalid_argument("forward: " + std::to_string(tasks.size()) + " task ids for " +
                                std::to_string(x.rows()) + " rows");
  for (int t : tasks)
    if (t < 0 || t >= policy.tasks()) throw std::invalid_argument("forward: task id " + std::to_string(t) + " out of range");

  RoutingPass pass;
  pass.rows = x.rows();
  NodeId h = input;
  for (const auto& layer : policy.encoder()) h = tape.relu(p.linear(h, layer));
  pass.representation = h;
  const NodeId task_repr = tape.gather_rows(p(policy.task_embedding()), std::vector<int>(tasks.begin(), tasks.end()));
  pass.routing_input = combine_representations(tape, h, task_repr, policy.config().state_routing);
  pass.logits = route_logits(p, pass.routing_input);
  return pass;
}

inline std::vector<Matrix> logit_values(const Tape& tape, const RoutingPass& pass) {
  std::vector<Matrix> out(pass.logits.size());
  for (std::size_t i = 1; i < pass.logits.size(); ++i) out[i] = tape.value(pass.logits[i]);
  return out;
}

struct Composition {
  NodeId head = kNoNode;
  std::vector<NodeId> outputs;        // m_i for i < n-1; kNoNode when skipped
  std::vector<NodeId> probabilities;  // p_i for i >= 1; kNoNode when skipped
  std::vector<bool> evaluated;
};

struct ComposeOptions {
  Blocking blocking = Blocking::kNone;
  /// Evaluate only modules some row can reach from the output.
  bool skip_unused = true;
};

inline void validate_masks(std::span<const RoutingMask> masks, int modules, Eigen::Index rows) {
  if (masks.empty()) throw std::invalid_argument("forward: routing masks are missing");
  if (static_cast<Eigen::Index>(masks.size()) != rows)
    throw std::invalid_argument("forward: " + std::to_string(masks.size()) + " routing masks for " +
                                std::to_string(rows) + " rows");
  for (std::size_t r = 0; r < masks.size(); ++r) {
    const auto& m = masks[r];
    if (m.modules() != modules)
      throw std::invalid_argument("forward: malformed routing mask at row " + std::to_string(r) + " (" +
                                  std::to_string(m.modules()) + " modules, network has " + std::to_string(modules) + ")");
    for (int i = 1; i < modules; ++i) {
      const std::uint32_t valid = (1u << i) - 1u;
      if (m.bits(i) == 0u || (m.bits(i) & ~valid) != 0u)
        throw std::invalid_argument("forward: malformed routing mask at row " + std::to_string(r) + ", module " +
                                    std::to_string(i));
    }
  }
}

/// Residual composition of the base modules along the given routing paths:
///   x_i = sum_j p_ij * m^_j,  m_i = x_i + M_i(x_i)  for 0 < i < n-1,
///   m_0 = M_0(F(x)),  head = M_{n-1}(x_{n-1}).
/// With blocking enabled, a source j with softmax(z_i)_j < 1/(i+1) enters
/// module i through a stop-gradient (full or residual form); forward values
/// are unchanged either way.
inline Composition compose(Binder& p, const RoutingPass& pass, std::span<const RoutingMask> masks,
                           ComposeOptions opts = {}) {
  const auto& policy = p.policy();
  Tape& tape = p.tape();
  const int n = policy.modules();
  const Eigen::Index rows = pass.rows;
  validate_masks(masks, n, rows);

  const bool hard = policy.config().function == routing::RoutingFunction::kHard;

  std::vector<bool> used(static_cast<std::size_t>(n), !opts.skip_unused);
  if (opts.skip_unused) {
    for (const auto& m : masks) {
      const auto flags = routing::effective_module_flags(m);
      for (int i = 0; i < n; ++i)
        if (flags[static_cast<std::size_t>(i)]) used[static_cast<std::size_t>(i)] = true;
    }
  }

  Composition out;
  out.outputs.assign(static_cast<std::size_t>(n), kNoNode);
  out.probabilities.assign(static_cast<std::size_t>(n), kNoNode);
  out.evaluated = used;

  std::vector<NodeId> inputs(static_cast<std::size_t>(n), kNoNode);      // x_i
  std::vector<NodeId> transforms(static_cast<std::size_t>(n), kNoNode);  // M_i(x_i)

  {
    const NodeId t0 = tape.relu(p.linear(pass.representation, policy.module(0)));
    transforms[0] = t0;
    out.outputs[0] = t0;
  }

  for (int i = 1; i < n; ++i) {
    if (!used[static_cast<std::size_t>(i)]) continue;
    const auto si = static_cast<std::size_t>(i);
    const NodeId z = pass.logits[si];
    Matrix full_softmax;
    if (opts.blocking != Blocking::kNone) ad::detail::row_softmax(tape.value(z), nullptr, full_softmax);

    Matrix d(rows, i);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (int j = 0; j < i; ++j) d(r, j) = masks[static_cast<std::size_t>(r)].selected(i, j) ? 1.0 : 0.0;

    NodeId probs;
    if (hard) {
      probs = tape.mul(tape.softmax(z), tape.constant(d));
    } else {
      probs = tape.mask_softmax(z, d);
    }
    out.probabilities[si] = probs;

    std::vector<NodeId> sources(si, kNoNode);
    for (int j = 0; j < i; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      if (!used[sj]) continue;
      NodeId src = out.outputs[sj];
      if (opts.blocking != Blocking::kNone) {
        Matrix blocked = Matrix::Zero(rows, 1);
        bool any = false;
        const double threshold = suitability_threshold(i);
        for (Eigen::Index r = 0; r < rows; ++r) {
          if (full_softmax(r, j) < threshold) {
            blocked(r, 0) = 1.0;
            any = true;
          }
        }
        if (any) {
          if (opts.blocking == Blocking::kFull || j == 0) {
            src = tape.stop_grad_rows(out.outputs[sj], std::move(blocked));
          } else {
            src = tape.add(inputs[sj], tape.stop_grad_rows(transforms[sj], std::move(blocked)));
          }
        }
      }
      sources[sj] = src;
    }
    const NodeId x = tape.mix(probs, sources);
    inputs[si] = x;
    if (i == n - 1) {
      out.head = p.linear(x, policy.module(i));
    } else {
      const NodeId t = tape.relu(p.linear(x, policy.module(i)));
      transforms[si] = t;
      out.outputs[si] = tape.add(x, t);
    }
  }
  return out;
}

/// Values of one forward pass along fixed routing paths.
struct RolloutOutput {
  Matrix head;
  std::vector<std::optional<Matrix>> modules;  // m_i; empty when skipped (head module always empty)
  std::vector<Matrix> probabilities;           // p_i (rows x i); empty for i = 0 or skipped
  std::vector<Matrix> logits;                  // z_i (rows x i)
};

inline RolloutOutput collect(const Tape& tape, const RoutingPass& pass, const Composition& comp) {
  RolloutOutput out;
  out.head = tape.value(comp.head);
  out.modules.resize(comp.outputs.size());
  out.probabilities.resize(comp.outputs.size());
  for (std::size_t i = 0; i < comp.outputs.size(); ++i) {
    if (comp.outputs[i] != kNoNode) out.modules[i] = tape.value(comp.outputs[i]);
    if (comp.probabilities[i] != kNoNode) out.probabilities[i] = tape.value(comp.probabilities[i]);
  }
  out.logits = logit_values(tape, pass);
  return out;
}

/// Behaviour-time forward along given routing paths; unused modules are not evaluated.
inline RolloutOutput forward_rollout(const ModulePolicy& policy, const Matrix& inputs, std::span<const int> tasks,
                                     std::span<const RoutingMask> masks, bool skip_unused = true) {
  Tape tape;
  Binder p(tape, policy, false);
  const auto pass = route(p, tape.constant(inputs), tasks);
  const auto comp = compose(p, pass, masks, ComposeOptions{Blocking::kNone, skip_unused});
  return collect(tape, pass, comp);
}

/// Training-time forward reusing stored behaviour routing paths, with
/// gradient blocking for currently unsuitable sources.
inline Composition forward_resrouting(Binder& p, NodeId input, std::span<const int> tasks,
                                      std::span<const RoutingMask> stored, Blocking blocking = Blocking::kResidual) {
  if (stored.empty()) throw std::invalid_argument("forward_resrouting: stored routing masks are missing");
  const auto pass = route(p, input, tasks);
  return compose(p, pass, stored, ComposeOptions{blocking, true});
}

/// Critic forward: the action is appended to the state before the encoder.
inline Composition critic_forward(Binder& p, NodeId state, NodeId action, std::span<const int> tasks,
                                  std::span<const RoutingMask> masks, Blocking blocking = Blocking::kNone) {
  Tape& tape = p.tape();
  const auto& s = tape.value(state);
  const auto& a = tape.value(action);
  if (p.policy().head() != HeadKind::kCritic) throw std::invalid_argument("critic_forward: network is not a critic");
  if (s.rows() != a.rows() || s.cols() + a.cols() != p.policy().input_dim())
    throw std::invalid_argument("critic_forward: state " + ad::shape_of(s) + " and action " + ad::shape_of(a) +
                                " do not match critic input width " + std::to_string(p.policy().input_dim()));
  const auto pass = route(p, tape.concat_cols(state, action), tasks);
  return compose(p, pass, masks, ComposeOptions{blocking, true});
}

}  // namespace d2r::modnet
