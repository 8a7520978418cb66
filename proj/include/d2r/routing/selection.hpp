#pragma once

#include "d2r/diffcore/parameters.hpp"
#include "d2r/routing/mask.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2r::routing {

/// How routing paths are formed from logits.
///  - kTopK: deterministic top-k everywhere.
///  - kSampleK: top-k at evaluation, sampled without replacement while training.
///  - kHard: top-1; the selected source keeps its unnormalised softmax weight.
///  - kSoft: every source selected.
enum class RoutingFunction { kTopK, kSampleK, kHard, kSoft };

inline const char* to_string(RoutingFunction f) {
  switch (f) {
    case RoutingFunction::kTopK: return "topk";
    case RoutingFunction::kSampleK: return "samplek";
    case RoutingFunction::kHard: return "hard";
    case RoutingFunction::kSoft: return "soft";
  }
  return "?";
}

inline RoutingFunction routing_function_from_string(const std::string& s) {
  if (s == "topk") return RoutingFunction::kTopK;
  if (s == "samplek") return RoutingFunction::kSampleK;
  if (s == "hard") return RoutingFunction::kHard;
  if (s == "soft") return RoutingFunction::kSoft;
  throw std::invalid_argument("unknown routing function '" + s + "' (expected topk|samplek|hard|soft)");
}

/// Number of sources each module selects under `f`.
inline int sources_per_module(RoutingFunction f, int k) {
  switch (f) {
    case RoutingFunction::kHard: return 1;
    case RoutingFunction::kSoft: return kAllSources;
    default: return k;
  }
}

/// Routing masks for a batch of logits. `logits[i]` holds (batch x i) logits
/// for module i >= 1; entry 0 is ignored. `taus` gives the sampling
/// temperature per row and is only read when sampling.
template <class Rng>
std::vector<RoutingMask> choose_masks(RoutingFunction f, int k, const std::vector<ad::Matrix>& logits, bool training,
                                      std::span<const double> taus, Rng& rng) {
  const int modules = static_cast<int>(logits.size());
  if (modules < 2) throw std::invalid_argument("choose_masks: need at least two modules");
  const auto rows = logits[1].rows();
  if (training && f == RoutingFunction::kSampleK && static_cast<Eigen::Index>(taus.size()) != rows)
    throw std::invalid_argument("choose_masks: one temperature per row required");
  const int per_module = sources_per_module(f, k);
  std::vector<RoutingMask> out(static_cast<std::size_t>(rows), RoutingMask(modules));
  std::vector<double> z;
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto& mask = out[static_cast<std::size_t>(r)];
    for (int i = 1; i < modules; ++i) {
      const auto& zi = logits[static_cast<std::size_t>(i)];
      z.assign(static_cast<std::size_t>(i), 0.0);
      for (int j = 0; j < i; ++j) z[static_cast<std::size_t>(j)] = zi(r, j);
      SourceMask m;
      if (training && f == RoutingFunction::kSampleK)
        m = sample_k_mask(z, per_module, taus[static_cast<std::size_t>(r)], rng);
      else
        m = topk_mask(z, per_module);
      mask.set_sources(i, m);
    }
  }
  return out;
}

}  // namespace d2r::routing
