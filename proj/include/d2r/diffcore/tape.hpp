#pragma once

#include "d2r/diffcore/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace d2r::ad {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

enum class OpKind : std::uint8_t {
  kConstant,
  kParameter,
  kAdd,
  kSub,
  kMul,
  kScale,       // a * scalar
  kAddScalar,   // a + scalar
  kMatMul,
  kAffine,      // x * W + b, b broadcast over rows
  kRelu,
  kTanh,
  kExp,
  kLog,
  kSoftplus,
  kSquare,
  kSoftmax,      // row-wise
  kMaskSoftmax,  // row-wise, constant 0/1 mask
  kMix,          // sum_j P(:,j) .* m_j
  kConcatCols,
  kSliceCols,
  kStopGrad,     // optional per-row blocking
  kRowSum,
  kMean,
  kWeightedSum,  // sum(w .* a) with constant w
  kGatherRows,
  kMin,
  kGaussianLogProb,
};

const char* op_name(OpKind op);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Constant payload passed to `Tape::record`.
struct OpData {
  double scalar = 0.0;
  Matrix matrix;
  std::vector<int> indices;
};

/// Parameter gradients produced by `Tape::backward`, keyed by (store, tensor index).
class Gradients {
 public:
  using Key = std::pair<const ParameterStore*, std::size_t>;

  void accumulate(const ParameterStore* store, std::size_t index, const Matrix& g) {
    auto [it, inserted] = grads_.try_emplace(Key{store, index}, g);
    if (!inserted) it->second += g;
  }

  bool contains(const ParameterStore& store, std::size_t index) const {
    return grads_.count(Key{&store, index}) != 0;
  }

  /// Gradient of one tensor; zeros when the tensor did not influence the root.
  Matrix get(const ParameterStore& store, std::size_t index) const {
    auto it = grads_.find(Key{&store, index});
    if (it != grads_.end()) return it->second;
    const auto& v = store.value(index);
    return Matrix::Zero(v.rows(), v.cols());
  }

  std::vector<Matrix> for_store(const ParameterStore& store) const {
    std::vector<Matrix> out;
    out.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) out.push_back(get(store, i));
    return out;
  }

  std::size_t size() const { return grads_.size(); }

 private:
  std::map<Key, Matrix> grads_;
};

/// Recorded stop-gradient output, used to replay a tape with the blocked
/// branches held at their original values (finite-difference surrogate).
struct FrozenStopGrad {
  Matrix value;
  Matrix blocked;  // (rows x 1) 0/1; empty means every row is blocked
};

/// Reverse-mode tape over dense matrices with eager forward evaluation.
///
/// Node ids are assigned in recording order, so every node's inputs precede
/// it. A tape is single-threaded; separate tapes may be used concurrently.
class Tape {
 public:
  Tape() = default;

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(NodeId id) const { return node(id).value; }
  double scalar(NodeId id) const {
    const auto& v = value(id);
    if (v.size() != 1) throw ShapeError("scalar(): node is " + shape_of(v));
    return v(0, 0);
  }
  OpKind kind(NodeId id) const { return node(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return node(id).inputs; }
  bool needs_grad(NodeId id) const { return node(id).needs_grad; }

  NodeId constant(Matrix v) {
    Node n;
    n.op = OpKind::kConstant;
    n.value = std::move(v);
    return push(std::move(n));
  }

  NodeId constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

  /// Records a parameter tensor. Untracked parameters behave as constants.
  NodeId parameter(const ParameterStore& store, std::size_t index, bool track = true) {
    Node n;
    n.op = OpKind::kParameter;
    n.value = store.value(index);
    n.store = &store;
    n.param = index;
    n.needs_grad = track;
    return push(std::move(n));
  }

  /// Appends an operation and evaluates it eagerly.
  NodeId record(OpKind op, std::span<const NodeId> inputs, OpData data = {});

  NodeId add(NodeId a, NodeId b) { return record2(OpKind::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return record2(OpKind::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return record2(OpKind::kMul, a, b); }
  NodeId scale(NodeId a, double s) { return record1(OpKind::kScale, a, OpData{s, {}, {}}); }
  NodeId add_scalar(NodeId a, double s) { return record1(OpKind::kAddScalar, a, OpData{s, {}, {}}); }
  NodeId matmul(NodeId a, NodeId b) { return record2(OpKind::kMatMul, a, b); }
  NodeId affine(NodeId x, NodeId w, NodeId b) {
    const NodeId in[] = {x, w, b};
    return record(OpKind::kAffine, in);
  }
  NodeId relu(NodeId a) { return record1(OpKind::kRelu, a); }
  NodeId tanh(NodeId a) { return record1(OpKind::kTanh, a); }
  NodeId exp(NodeId a) { return record1(OpKind::kExp, a); }
  NodeId log(NodeId a) { return record1(OpKind::kLog, a); }
  NodeId softplus(NodeId a) { return record1(OpKind::kSoftplus, a); }
  NodeId square(NodeId a) { return record1(OpKind::kSquare, a); }
  NodeId softmax(NodeId a) { return record1(OpKind::kSoftmax, a); }
  NodeId mask_softmax(NodeId z, Matrix mask) {
    return record1(OpKind::kMaskSoftmax, z, OpData{0.0, std::move(mask), {}});
  }
  /// sum_j probs(:, j) .* sources[j]; kNoNode marks a source that was skipped.
  NodeId mix(NodeId probs, std::span<const NodeId> sources) {
    std::vector<NodeId> in;
    in.reserve(sources.size() + 1);
    in.push_back(probs);
    in.insert(in.end(), sources.begin(), sources.end());
    return record(OpKind::kMix, in);
  }
  NodeId concat_cols(NodeId a, NodeId b) { return record2(OpKind::kConcatCols, a, b); }
  NodeId slice_cols(NodeId a, int start, int count) {
    return record1(OpKind::kSliceCols, a, OpData{0.0, {}, {start, count}});
  }
  NodeId stop_grad(NodeId a) { return record1(OpKind::kStopGrad, a); }
  /// Stop-gradient applied only on rows where `blocked(r) != 0`.
  NodeId stop_grad_rows(NodeId a, Matrix blocked) {
    return record1(OpKind::kStopGrad, a, OpData{0.0, std::move(blocked), {}});
  }
  NodeId row_sum(NodeId a) { return record1(OpKind::kRowSum, a); }
  NodeId mean(NodeId a) { return record1(OpKind::kMean, a); }
  NodeId weighted_sum(NodeId a, Matrix weights) {
    return record1(OpKind::kWeightedSum, a, OpData{0.0, std::move(weights), {}});
  }
  NodeId gather_rows(NodeId table, std::vector<int> rows) {
    return record1(OpKind::kGatherRows, table, OpData{0.0, {}, std::move(rows)});
  }
  NodeId min(NodeId a, NodeId b) { return record2(OpKind::kMin, a, b); }
  /// Row-wise log density of a diagonal Gaussian evaluated at `u`.
  NodeId gaussian_log_prob(NodeId u, NodeId mean, NodeId log_std) {
    const NodeId in[] = {u, mean, log_std};
    return record(OpKind::kGaussianLogProb, in);
  }

  /// Reverse sweep from a scalar root. The tape itself is not modified, so
  /// repeated calls return identical gradients.
  Gradients backward(NodeId root) const;

  /// Snapshot of every stop-gradient node in recording order.
  std::vector<FrozenStopGrad> stop_grad_snapshot() const {
    std::vector<FrozenStopGrad> out;
    for (const auto& n : nodes_) {
      if (n.op == OpKind::kStopGrad) out.push_back({n.value, n.aux});
    }
    return out;
  }

  /// Replays stop-gradient outputs from `frozen`: the k-th stop-gradient node
  /// recorded on this tape takes the k-th frozen value on its blocked rows.
  void freeze_stop_grads(std::shared_ptr<const std::vector<FrozenStopGrad>> frozen) {
    frozen_ = std::move(frozen);
    frozen_cursor_ = 0;
  }

 private:
  struct Node {
    OpKind op = OpKind::kConstant;
    std::vector<NodeId> inputs;
    Matrix value;
    Matrix aux;
    std::vector<int> index;
    double scalar = 0.0;
    const ParameterStore* store = nullptr;
    std::size_t param = 0;
    bool needs_grad = false;
  };

  const Node& node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw std::out_of_range("tape: node id " + std::to_string(id) + " does not exist");
    return nodes_[static_cast<std::size_t>(id)];
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId record1(OpKind op, NodeId a, OpData data = {}) {
    const NodeId in[] = {a};
    return record(op, in, std::move(data));
  }
  NodeId record2(OpKind op, NodeId a, NodeId b) {
    const NodeId in[] = {a, b};
    return record(op, in);
  }

  [[noreturn]] void shape_error(OpKind op, std::span<const NodeId> inputs, const std::string& why) const {
    std::string msg = std::string("tape: ") + op_name(op) + " shape mismatch (" + why + "):";
    for (NodeId id : inputs) {
      msg += " ";
      msg += id == kNoNode ? std::string("<skipped>") : shape_of(node(id).value);
    }
    throw ShapeError(msg);
  }

  std::vector<Node> nodes_;
  std::shared_ptr<const std::vector<FrozenStopGrad>> frozen_;
  std::size_t frozen_cursor_ = 0;
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAffine: return "affine";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kSquare: return "square";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kMaskSoftmax: return "mask_softmax";
    case OpKind::kMix: return "mix";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kStopGrad: return "stop_grad";
    case OpKind::kRowSum: return "row_sum";
    case OpKind::kMean: return "mean";
    case OpKind::kWeightedSum: return "weighted_sum";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kMin: return "min";
    case OpKind::kGaussianLogProb: return "gaussian_log_prob";
  }
  return "unknown";
}

namespace detail {

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void row_softmax(const Matrix& z, const Matrix* mask, Matrix& out) {
  out.resize(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < z.cols(); ++c)
      if (!mask || (*mask)(r, c) != 0.0) hi = std::max(hi, z(r, c));
    double total = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      const double e = (!mask || (*mask)(r, c) != 0.0) ? std::exp(z(r, c) - hi) : 0.0;
      out(r, c) = e;
      total += e;
    }
    out.row(r) /= total;
  }
}

}  // namespace detail

inline NodeId Tape::record(OpKind op, std::span<const NodeId> inputs, OpData data) {
  auto require_arity = [&](std::size_t n) {
    if (inputs.size() != n)
      throw ShapeError(std::string("tape: ") + op_name(op) + " expects " + std::to_string(n) +
                       " inputs, got " + std::to_string(inputs.size()));
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i] == kNoNode && op == OpKind::kMix && i > 0) continue;
    (void)node(inputs[i]);
  }

  Node n;
  n.op = op;
  n.inputs.assign(inputs.begin(), inputs.end());
  n.scalar = data.scalar;

  auto in = [&](std::size_t i) -> const Matrix& { return nodes_[static_cast<std::size_t>(inputs[i])].value; };
  auto same_shape = [&](const Matrix& a, const Matrix& b) { return a.rows() == b.rows() && a.cols() == b.cols(); };

  switch (op) {
    case OpKind::kConstant:
      require_arity(0);
      n.value = std::move(data.matrix);
      break;
    case OpKind::kParameter:
      throw std::invalid_argument("tape: use Tape::parameter() to record parameters");
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kMin: {
      require_arity(2);
      if (!same_shape(in(0), in(1))) shape_error(op, inputs, "operands differ");
      if (op == OpKind::kAdd) n.value = in(0) + in(1);
      else if (op == OpKind::kSub) n.value = in(0) - in(1);
      else if (op == OpKind::kMul) n.value = in(0).cwiseProduct(in(1));
      else n.value = in(0).cwiseMin(in(1));
      break;
    }
    case OpKind::kScale:
      require_arity(1);
      n.value = in(0) * data.scalar;
      break;
    case OpKind::kAddScalar:
      require_arity(1);
      n.value = in(0).array() + data.scalar;
      break;
    case OpKind::kMatMul:
      require_arity(2);
      if (in(0).cols() != in(1).rows()) shape_error(op, inputs, "inner dimensions");
      n.value = in(0) * in(1);
      break;
    case OpKind::kAffine: {
      require_arity(3);
      const auto& x = in(0);
      const auto& w = in(1);
      const auto& b = in(2);
      if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) shape_error(op, inputs, "x*W+b");
      n.value.noalias() = x * w;
      n.value.rowwise() += b.row(0);
      break;
    }
    case OpKind::kRelu:
      require_arity(1);
      n.value = in(0).cwiseMax(0.0);
      break;
    case OpKind::kTanh:
      require_arity(1);
      n.value = in(0).array().tanh();
      break;
    case OpKind::kExp:
      require_arity(1);
      n.value = in(0).array().exp();
      break;
    case OpKind::kLog:
      require_arity(1);
      n.value = in(0).array().log();
      break;
    case OpKind::kSoftplus:
      require_arity(1);
      n.value = in(0).unaryExpr([](double v) { return detail::softplus(v); });
      break;
    case OpKind::kSquare:
      require_arity(1);
      n.value = in(0).array().square();
      break;
    case OpKind::kSoftmax:
      require_arity(1);
      if (in(0).cols() == 0) shape_error(op, inputs, "empty rows");
      detail::row_softmax(in(0), nullptr, n.value);
      break;
    case OpKind::kMaskSoftmax: {
      require_arity(1);
      if (!same_shape(in(0), data.matrix)) shape_error(op, inputs, "mask is " + shape_of(data.matrix));
      for (Eigen::Index r = 0; r < data.matrix.rows(); ++r) {
        if ((data.matrix.row(r).array() != 0.0).count() == 0)
          throw std::invalid_argument("tape: mask_softmax row " + std::to_string(r) + " has an all-zero mask");
      }
      n.aux = std::move(data.matrix);
      detail::row_softmax(in(0), &n.aux, n.value);
      break;
    }
    case OpKind::kMix: {
      if (inputs.size() < 2) throw ShapeError("tape: mix needs probabilities and at least one source");
      const auto& p = in(0);
      const std::size_t k = inputs.size() - 1;
      if (static_cast<std::size_t>(p.cols()) != k) shape_error(op, inputs, "probability columns vs sources");
      Eigen::Index width = -1;
      for (std::size_t j = 1; j < inputs.size(); ++j) {
        if (inputs[j] == kNoNode) continue;
        const auto& m = in(j);
        if (m.rows() != p.rows() || (width >= 0 && m.cols() != width)) shape_error(op, inputs, "source shapes");
        width = m.cols();
      }
      if (width < 0) throw ShapeError("tape: mix has no evaluated source");
      n.value = Matrix::Zero(p.rows(), width);
      bool first = true;
      for (std::size_t j = 1; j < inputs.size(); ++j) {
        if (inputs[j] == kNoNode) continue;
        if (first) {
          n.value = in(j).array().colwise() * p.col(static_cast<Eigen::Index>(j - 1)).array();
          first = false;
        } else {
          n.value.array() += in(j).array().colwise() * p.col(static_cast<Eigen::Index>(j - 1)).array();
        }
      }
      break;
    }
    case OpKind::kConcatCols:
      require_arity(2);
      if (in(0).rows() != in(1).rows()) shape_error(op, inputs, "row counts");
      n.value.resize(in(0).rows(), in(0).cols() + in(1).cols());
      n.value << in(0), in(1);
      break;
    case OpKind::kSliceCols: {
      require_arity(1);
      if (data.indices.size() != 2) throw ShapeError("tape: slice_cols needs {start, count}");
      const int start = data.indices[0];
      const int count = data.indices[1];
      if (start < 0 || count < 0 || start + count > in(0).cols()) shape_error(op, inputs, "slice out of range");
      n.value = in(0).middleCols(start, count);
      n.index = std::move(data.indices);
      break;
    }
    case OpKind::kStopGrad: {
      require_arity(1);
      const auto& a = in(0);
      if (data.matrix.size() != 0 && (data.matrix.rows() != a.rows() || data.matrix.cols() != 1))
        shape_error(op, inputs, "blocked rows are " + shape_of(data.matrix));
      n.aux = std::move(data.matrix);
      n.value = a;
      if (frozen_) {
        if (frozen_cursor_ >= frozen_->size()) throw std::logic_error("tape: frozen stop-grad replay ran out of values");
        const auto& f = (*frozen_)[frozen_cursor_++];
        if (f.value.rows() != a.rows() || f.value.cols() != a.cols())
          throw std::logic_error("tape: frozen stop-grad replay shape mismatch");
        n.aux = f.blocked;
        if (n.aux.size() == 0) {
          n.value = f.value;
        } else {
          for (Eigen::Index r = 0; r < a.rows(); ++r)
            if (n.aux(r, 0) != 0.0) n.value.row(r) = f.value.row(r);
        }
      }
      break;
    }
    case OpKind::kRowSum:
      require_arity(1);
      n.value = in(0).rowwise().sum();
      break;
    case OpKind::kMean:
      require_arity(1);
      if (in(0).size() == 0) shape_error(op, inputs, "empty input");
      n.value = Matrix::Constant(1, 1, in(0).mean());
      break;
    case OpKind::kWeightedSum:
      require_arity(1);
      if (!same_shape(in(0), data.matrix)) shape_error(op, inputs, "weights are " + shape_of(data.matrix));
      n.value = Matrix::Constant(1, 1, in(0).cwiseProduct(data.matrix).sum());
      n.aux = std::move(data.matrix);
      break;
    case OpKind::kGatherRows: {
      require_arity(1);
      const auto& table = in(0);
      n.value.resize(static_cast<Eigen::Index>(data.indices.size()), table.cols());
      for (std::size_t r = 0; r < data.indices.size(); ++r) {
        const int id = data.indices[r];
        if (id < 0 || id >= table.rows()) shape_error(op, inputs, "row index " + std::to_string(id));
        n.value.row(static_cast<Eigen::Index>(r)) = table.row(id);
      }
      n.index = std::move(data.indices);
      break;
    }
    case OpKind::kGaussianLogProb: {
      require_arity(3);
      const auto& u = in(0);
      const auto& mu = in(1);
      const auto& ls = in(2);
      if (!same_shape(u, mu) || !same_shape(u, ls)) shape_error(op, inputs, "u, mean, log_std");
      const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
      const Matrix zeta = ((u - mu).array() / ls.array().exp()).matrix();
      n.value = (-0.5 * zeta.array().square() - ls.array() - half_log_2pi).matrix().rowwise().sum();
      break;
    }
  }

  for (NodeId id : inputs) {
    if (id == kNoNode) continue;
    if (nodes_[static_cast<std::size_t>(id)].needs_grad) n.needs_grad = true;
  }
  if (op == OpKind::kStopGrad && n.aux.size() == 0) n.needs_grad = false;
  return push(std::move(n));
}

inline Gradients Tape::backward(NodeId root) const {
  const auto& r = node(root);
  if (r.value.size() != 1)
    throw ShapeError("tape: backward root must be scalar, got " + shape_of(r.value));

  Gradients grads;
  const std::size_t count = static_cast<std::size_t>(root) + 1;
  std::vector<Matrix> adj(count);
  std::vector<char> has(count, 0);

  auto accum = [&](NodeId id, const auto& expr) {
    if (id == kNoNode) return;
    const auto k = static_cast<std::size_t>(id);
    if (!nodes_[k].needs_grad) return;
    if (!has[k]) {
      adj[k] = expr;
      has[k] = 1;
    } else {
      adj[k] += expr;
    }
  };

  adj[static_cast<std::size_t>(root)] = Matrix::Ones(1, 1);
  has[static_cast<std::size_t>(root)] = 1;

  for (std::size_t k = count; k-- > 0;) {
    if (!has[k]) continue;
    const Node& n = nodes_[k];
    if (!n.needs_grad) continue;
    const Matrix& g = adj[k];
    auto in = [&](std::size_t i) -> const Matrix& { return nodes_[static_cast<std::size_t>(n.inputs[i])].value; };

    switch (n.op) {
      case OpKind::kConstant:
        break;
      case OpKind::kParameter:
        grads.accumulate(n.store, n.param, g);
        break;
      case OpKind::kAdd:
        accum(n.inputs[0], g);
        accum(n.inputs[1], g);
        break;
      case OpKind::kSub:
        accum(n.inputs[0], g);
        accum(n.inputs[1], -g);
        break;
      case OpKind::kMul:
        accum(n.inputs[0], g.cwiseProduct(in(1)));
        accum(n.inputs[1], g.cwiseProduct(in(0)));
        break;
      case OpKind::kScale:
        accum(n.inputs[0], g * n.scalar);
        break;
      case OpKind::kAddScalar:
        accum(n.inputs[0], g);
        break;
      case OpKind::kMatMul:
        accum(n.inputs[0], g * in(1).transpose());
        accum(n.inputs[1], in(0).transpose() * g);
        break;
      case OpKind::kAffine:
        accum(n.inputs[0], g * in(1).transpose());
        accum(n.inputs[1], in(0).transpose() * g);
        accum(n.inputs[2], g.colwise().sum());
        break;
      case OpKind::kRelu:
        accum(n.inputs[0], (in(0).array() > 0.0).select(g, 0.0).matrix());
        break;
      case OpKind::kTanh:
        accum(n.inputs[0], (g.array() * (1.0 - n.value.array().square())).matrix());
        break;
      case OpKind::kExp:
        accum(n.inputs[0], g.cwiseProduct(n.value));
        break;
      case OpKind::kLog:
        accum(n.inputs[0], (g.array() / in(0).array()).matrix());
        break;
      case OpKind::kSoftplus:
        accum(n.inputs[0], (g.array() * in(0).unaryExpr([](double v) { return detail::sigmoid(v); }).array()).matrix());
        break;
      case OpKind::kSquare:
        accum(n.inputs[0], (2.0 * g.array() * in(0).array()).matrix());
        break;
      case OpKind::kSoftmax:
      case OpKind::kMaskSoftmax: {
        const Matrix& y = n.value;
        const Eigen::VectorXd inner = g.cwiseProduct(y).rowwise().sum();
        accum(n.inputs[0], (y.array() * (g.colwise() - inner).array()).matrix());
        break;
      }
      case OpKind::kMix: {
        const Matrix& p = in(0);
        const bool probs_grad = nodes_[static_cast<std::size_t>(n.inputs[0])].needs_grad;
        Matrix gp;
        if (probs_grad) gp = Matrix::Zero(p.rows(), p.cols());
        for (std::size_t j = 1; j < n.inputs.size(); ++j) {
          if (n.inputs[j] == kNoNode) continue;
          const auto col = static_cast<Eigen::Index>(j - 1);
          if (probs_grad) gp.col(col) = g.cwiseProduct(in(j)).rowwise().sum();
          accum(n.inputs[j], (g.array().colwise() * p.col(col).array()).matrix());
        }
        if (probs_grad) accum(n.inputs[0], gp);
        break;
      }
      case OpKind::kConcatCols: {
        const auto left = in(0).cols();
        accum(n.inputs[0], g.leftCols(left));
        accum(n.inputs[1], g.rightCols(g.cols() - left));
        break;
      }
      case OpKind::kSliceCols: {
        const auto& a = in(0);
        Matrix ga = Matrix::Zero(a.rows(), a.cols());
        ga.middleCols(n.index[0], n.index[1]) = g;
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kStopGrad: {
        if (n.aux.size() == 0) break;
        Matrix ga = g;
        for (Eigen::Index row = 0; row < ga.rows(); ++row)
          if (n.aux(row, 0) != 0.0) ga.row(row).setZero();
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kRowSum: {
        const auto& a = in(0);
        Matrix ga(a.rows(), a.cols());
        ga.colwise() = g.col(0);
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kMean: {
        const auto& a = in(0);
        accum(n.inputs[0], Matrix::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<double>(a.size())));
        break;
      }
      case OpKind::kWeightedSum:
        accum(n.inputs[0], n.aux * g(0, 0));
        break;
      case OpKind::kGatherRows: {
        const auto& table = in(0);
        Matrix gt = Matrix::Zero(table.rows(), table.cols());
        for (std::size_t row = 0; row < n.index.size(); ++row)
          gt.row(n.index[row]) += g.row(static_cast<Eigen::Index>(row));
        accum(n.inputs[0], gt);
        break;
      }
      case OpKind::kMin: {
        const auto take_a = (in(0).array() <= in(1).array());
        accum(n.inputs[0], take_a.select(g, 0.0).matrix());
        accum(n.inputs[1], take_a.select(0.0, g).matrix());
        break;
      }
      case OpKind::kGaussianLogProb: {
        const auto& u = in(0);
        const auto& mu = in(1);
        const auto& ls = in(2);
        const Eigen::ArrayXXd inv_std = (-ls.array()).exp();
        const Eigen::ArrayXXd zeta = (u - mu).array() * inv_std;
        const Eigen::ArrayXXd gb = g.col(0).replicate(1, u.cols()).array();
        accum(n.inputs[0], (-gb * zeta * inv_std).matrix());
        accum(n.inputs[1], (gb * zeta * inv_std).matrix());
        accum(n.inputs[2], (gb * (zeta.square() - 1.0)).matrix());
        break;
      }
    }
  }
  return grads;
}

}  // namespace d2r::ad
