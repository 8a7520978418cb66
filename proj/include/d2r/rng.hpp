#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace d2r {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Independent generator for a named purpose ("init", "env/2", ...) derived
/// from the master seed.
inline Rng named_stream(std::uint64_t master_seed, std::string_view name) {
  const std::uint64_t h = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

}  // namespace d2r
