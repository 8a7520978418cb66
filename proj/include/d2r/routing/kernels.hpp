#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2r::routing {

/// Binary selection over the candidate sources of one module (1 = selected).
using SourceMask = std::vector<std::uint8_t>;

/// Sentinel for "select every source" (soft routing).
inline constexpr int kAllSources = std::numeric_limits<int>::max();

inline int selected_count(int k, std::size_t candidates) {
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(k), candidates));
}

/// Selects the min(k, |z|) largest logits; ties go to the lowest index.
inline SourceMask topk_mask(std::span<const double> z, int k) {
  if (z.empty()) throw std::invalid_argument("topk_mask: empty logit vector");
  if (k < 1) throw std::invalid_argument("topk_mask: k must be >= 1");
  std::vector<std::size_t> order(z.size());
  std::iota(order.begin(), order.end(), 0);
  const int take = selected_count(k, z.size());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
  SourceMask mask(z.size(), 0);
  for (int i = 0; i < take; ++i) mask[order[static_cast<std::size_t>(i)]] = 1;
  return mask;
}

/// Draws min(k, |z|) distinct sources by sequential categorical draws from
/// softmax(z / tau), renormalised over the sources not yet drawn.
template <class Rng>
SourceMask sample_k_mask(std::span<const double> z, int k, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("sample_k_mask: tau must be > 0, got " + std::to_string(tau));
  if (z.empty()) throw std::invalid_argument("sample_k_mask: empty logit vector");
  if (k < 1) throw std::invalid_argument("sample_k_mask: k must be >= 1");
  const int take = selected_count(k, z.size());
  SourceMask mask(z.size(), 0);
  if (static_cast<std::size_t>(take) == z.size()) {
    std::fill(mask.begin(), mask.end(), 1);
    return mask;
  }
  std::vector<double> weight(z.size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int draw = 0; draw < take; ++draw) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < z.size(); ++j)
      if (!mask[j]) hi = std::max(hi, z[j] / tau);
    double total = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      weight[j] = mask[j] ? 0.0 : std::exp(z[j] / tau - hi);
      total += weight[j];
    }
    const double u = unit(rng) * total;
    double acc = 0.0;
    std::size_t pick = z.size();
    for (std::size_t j = 0; j < z.size(); ++j) {
      if (mask[j]) continue;
      acc += weight[j];
      pick = j;
      if (u < acc) break;
    }
    mask[pick] = 1;
  }
  return mask;
}

/// p_j = exp(z_j) d_j / sum_k exp(z_k) d_k, stabilised by the max over
/// selected entries. Unselected entries are exactly zero.
inline std::vector<double> mask_softmax(std::span<const double> z, std::span<const std::uint8_t> d) {
  if (z.size() != d.size())
    throw std::invalid_argument("mask_softmax: logits and mask lengths differ (" + std::to_string(z.size()) +
                                " vs " + std::to_string(d.size()) + ")");
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < z.size(); ++j)
    if (d[j]) hi = std::max(hi, z[j]);
  if (hi == -std::numeric_limits<double>::infinity()) throw std::invalid_argument("mask_softmax: all-zero mask");
  std::vector<double> p(z.size(), 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (!d[j]) continue;
    p[j] = std::exp(z[j] - hi);
    total += p[j];
  }
  for (auto& v : p) v /= total;
  return p;
}

/// Unmasked softmax over all candidates.
inline std::vector<double> softmax(std::span<const double> z) {
  const SourceMask all(z.size(), 1);
  return mask_softmax(z, all);
}

/// Route-balancing temperatures: tau_T = (1/alpha_T) / sum_j (1/alpha_j),
/// evaluated as softmax(-log alpha).
inline std::vector<double> route_balance_temperatures(std::span<const double> alphas) {
  if (alphas.empty()) throw std::invalid_argument("route_balance_temperatures: no tasks");
  std::vector<double> neg_log(alphas.size());
  for (std::size_t t = 0; t < alphas.size(); ++t) {
    if (!(alphas[t] > 0.0) || !std::isfinite(alphas[t]))
      throw std::invalid_argument("route_balance_temperatures: alpha[" + std::to_string(t) +
                                  "] must be positive and finite, got " + std::to_string(alphas[t]));
    neg_log[t] = -std::log(alphas[t]);
  }
  return softmax(neg_log);
}

}  // namespace d2r::routing
