#pragma once

#include "d2r/diffcore/tape.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace d2r::ad {

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over every tensor of one ParameterStore.
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterStore& store, AdamOptions opts) : opts_(opts) { reset(store); }

  void reset(const ParameterStore& store) {
    m_.clear();
    v_.clear();
    steps_.clear();
    for (const auto& value : store.values()) {
      m_.push_back(Matrix::Zero(value.rows(), value.cols()));
      v_.push_back(Matrix::Zero(value.rows(), value.cols()));
      steps_.push_back(Eigen::ArrayXd::Zero(value.rows()));
    }
  }

  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }

  void step(ParameterStore& store, const Gradients& grads) { step(store, grads.for_store(store)); }

  /// One update. When `active_rows` is given, rows marked false are left
  /// untouched, moments included (lazy update for row-indexed tables).
  void step(ParameterStore& store, const std::vector<Matrix>& grads, std::span<const std::uint8_t> active_rows = {}) {
    if (grads.size() != store.size() || m_.size() != store.size())
      throw std::invalid_argument("adam: gradient count does not match the parameter store");
    auto lock = store.write_lock();
    for (std::size_t p = 0; p < store.size(); ++p) {
      Matrix& w = store.value(p);
      const Matrix& g = grads[p];
      if (g.rows() != w.rows() || g.cols() != w.cols())
        throw std::invalid_argument("adam: gradient shape mismatch for " + store.name(p));
      if (active_rows.empty()) {
        steps_[p] += 1.0;
        const double t = steps_[p](0);
        const double c1 = 1.0 - std::pow(opts_.beta1, t);
        const double c2 = 1.0 - std::pow(opts_.beta2, t);
        m_[p] = opts_.beta1 * m_[p] + (1.0 - opts_.beta1) * g;
        v_[p] = opts_.beta2 * v_[p].array() + (1.0 - opts_.beta2) * g.array().square();
        w.array() -= opts_.lr * (m_[p].array() / c1) / ((v_[p].array() / c2).sqrt() + opts_.eps);
        continue;
      }
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        if (!active_rows[static_cast<std::size_t>(r)]) continue;
        const double t = ++steps_[p](r);
        const double c1 = 1.0 - std::pow(opts_.beta1, t);
        const double c2 = 1.0 - std::pow(opts_.beta2, t);
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          double& m = m_[p](r, c);
          double& v = v_[p](r, c);
          m = opts_.beta1 * m + (1.0 - opts_.beta1) * g(r, c);
          v = opts_.beta2 * v + (1.0 - opts_.beta2) * g(r, c) * g(r, c);
          w(r, c) -= opts_.lr * (m / c1) / (std::sqrt(v / c2) + opts_.eps);
        }
      }
    }
  }

  const std::vector<Eigen::ArrayXd>& step_counts() const { return steps_; }
  void restore(std::vector<Matrix> m, std::vector<Matrix> v, std::vector<Eigen::ArrayXd> steps) {
    if (m.size() != m_.size() || v.size() != v_.size() || steps.size() != steps_.size())
      throw std::invalid_argument("adam: restored state does not match the parameter store");
    m_ = std::move(m);
    v_ = std::move(v);
    steps_ = std::move(steps);
  }

  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  AdamOptions opts_{};
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::vector<Eigen::ArrayXd> steps_;
};

/// target <- rho * target + (1 - rho) * online, element-wise, evaluated as
/// target + (1 - rho) * (online - target) so equal tensors stay bit-exact.
inline void polyak_update(ParameterStore& target, const ParameterStore& online, double rho) {
  if (target.size() != online.size()) throw std::invalid_argument("polyak: store sizes differ");
  auto wl = target.write_lock();
  auto rl = online.read_lock();
  for (std::size_t p = 0; p < target.size(); ++p) {
    if (target.value(p).rows() != online.value(p).rows() || target.value(p).cols() != online.value(p).cols())
      throw std::invalid_argument("polyak: shape mismatch for " + target.name(p));
    target.value(p) += (1.0 - rho) * (online.value(p) - target.value(p));
  }
}

}  // namespace d2r::ad
