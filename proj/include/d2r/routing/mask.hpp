#pragma once

#include "d2r/routing/kernels.hpp"

#include <bit>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2r::routing {

/// Routing paths of one network for one input: for every module i >= 1
/// (0-based), the subset of its predecessors 0..i-1 it reads from.
/// Module 0 always reads the state representation and has no entry.
class RoutingMask {
 public:
  static constexpr int kMaxModules = 32;

  RoutingMask() = default;
  explicit RoutingMask(int modules) : modules_(modules), bits_(static_cast<std::size_t>(modules), 0u) {
    if (modules < 2 || modules > kMaxModules)
      throw std::invalid_argument("RoutingMask: module count must be in [2, 32], got " + std::to_string(modules));
  }

  /// Every module reads from all of its predecessors.
  static RoutingMask full(int modules) {
    RoutingMask m(modules);
    for (int i = 1; i < modules; ++i) m.bits_[static_cast<std::size_t>(i)] = (1u << i) - 1u;
    return m;
  }

  int modules() const { return modules_; }
  bool empty() const { return modules_ == 0; }

  bool selected(int module, int source) const {
    check(module);
    if (source < 0 || source >= module) return false;
    return (bits_[static_cast<std::size_t>(module)] >> source) & 1u;
  }

  void set_sources(int module, std::span<const std::uint8_t> mask) {
    check(module);
    if (static_cast<int>(mask.size()) != module)
      throw std::invalid_argument("RoutingMask: module " + std::to_string(module) + " expects " +
                                  std::to_string(module) + " entries, got " + std::to_string(mask.size()));
    std::uint32_t b = 0;
    for (int j = 0; j < module; ++j)
      if (mask[static_cast<std::size_t>(j)]) b |= (1u << j);
    bits_[static_cast<std::size_t>(module)] = b;
  }

  SourceMask sources(int module) const {
    check(module);
    SourceMask out(static_cast<std::size_t>(module), 0);
    for (int j = 0; j < module; ++j) out[static_cast<std::size_t>(j)] = selected(module, j) ? 1 : 0;
    return out;
  }

  int count(int module) const {
    check(module);
    return std::popcount(bits_[static_cast<std::size_t>(module)]);
  }

  std::uint32_t bits(int module) const {
    check(module);
    return bits_[static_cast<std::size_t>(module)];
  }
  void set_bits(int module, std::uint32_t b) {
    check(module);
    bits_[static_cast<std::size_t>(module)] = b;
  }

  /// Every module selects exactly min(k, i) sources among its predecessors.
  bool well_formed(int modules, int k) const {
    if (modules_ != modules) return false;
    for (int i = 1; i < modules_; ++i) {
      const std::uint32_t valid = (1u << i) - 1u;
      const auto b = bits_[static_cast<std::size_t>(i)];
      if ((b & ~valid) != 0u) return false;
      if (count(i) != selected_count(k, static_cast<std::size_t>(i))) return false;
    }
    return true;
  }

  bool operator==(const RoutingMask&) const = default;

 private:
  void check(int module) const {
    if (module < 1 || module >= modules_)
      throw std::out_of_range("RoutingMask: module " + std::to_string(module) + " out of range for " +
                              std::to_string(modules_) + " modules");
  }

  int modules_ = 0;
  std::vector<std::uint32_t> bits_;
};

/// Modules reachable backwards from the output module along selected edges
/// (edge j -> i when module i selects source j), output module included.
/// Returned as a per-module flag vector.
inline std::vector<bool> effective_module_flags(const RoutingMask& mask) {
  const int n = mask.modules();
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  used[static_cast<std::size_t>(n - 1)] = true;
  // Edges only point from lower to higher indices, so one descending sweep suffices.
  for (int i = n - 1; i >= 1; --i) {
    if (!used[static_cast<std::size_t>(i)]) continue;
    const auto b = mask.bits(i);
    for (int j = 0; j < i; ++j)
      if ((b >> j) & 1u) used[static_cast<std::size_t>(j)] = true;
  }
  return used;
}

/// Sorted 0-based ids of the effective modules.
inline std::vector<int> effective_modules(const RoutingMask& mask) {
  const auto flags = effective_module_flags(mask);
  std::vector<int> out;
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace d2r::routing
