#pragma once

#include "d2r/diffcore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>

namespace d2r::ad {

/// Records a scalar function of the parameters held in some stores.
using FunctionBuilder = std::function<NodeId(Tape&)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Upper bound on checked elements per tensor (0 = all). Elements are
  /// taken at an even stride so every region of a tensor is visited.
  std::size_t max_elements_per_tensor = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients with central differences over every
/// parameter of `stores`. Error per element is |analytic - fd| / max(1, |fd|).
///
/// Stop-gradient branches are frozen at their unperturbed values while
/// differencing, so the comparison is against the surrogate function whose
/// blocked inputs are constants.
inline GradCheckResult gradient_check_detailed(const FunctionBuilder& build, std::span<ParameterStore* const> stores,
                                               GradCheckOptions opts = {}) {
  Tape base;
  const NodeId root = build(base);
  const Gradients grads = base.backward(root);
  auto frozen = std::make_shared<const std::vector<FrozenStopGrad>>(base.stop_grad_snapshot());

  auto evaluate = [&]() {
    Tape t;
    t.freeze_stop_grads(frozen);
    return t.scalar(build(t));
  };

  GradCheckResult result;
  for (ParameterStore* store : stores) {
    for (std::size_t p = 0; p < store->size(); ++p) {
      const Matrix analytic = grads.get(*store, p);
      Matrix& value = store->value(p);
      const auto total = static_cast<std::size_t>(value.size());
      std::size_t stride = 1;
      if (opts.max_elements_per_tensor > 0 && total > opts.max_elements_per_tensor)
        stride = (total + opts.max_elements_per_tensor - 1) / opts.max_elements_per_tensor;
      for (std::size_t e = 0; e < total; e += stride) {
        double* slot = value.data() + e;
        const double saved = *slot;
        *slot = saved + opts.epsilon;
        const double plus = evaluate();
        *slot = saved - opts.epsilon;
        const double minus = evaluate();
        *slot = saved;
        const double fd = (plus - minus) / (2.0 * opts.epsilon);
        const double err = std::abs(analytic.data()[e] - fd) / std::max(1.0, std::abs(fd));
        result.max_relative_error = std::max(result.max_relative_error, err);
        ++result.checked;
      }
    }
  }
  return result;
}

inline double gradient_check(const FunctionBuilder& build, std::span<ParameterStore* const> stores,
                             double epsilon = 1e-5) {
  return gradient_check_detailed(build, stores, GradCheckOptions{epsilon, 0}).max_relative_error;
}

}  // namespace d2r::ad
