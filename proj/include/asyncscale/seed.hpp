// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace asyncscale {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                       std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Labeled seed splitting: every subsystem stream is a pure function of the
/// root seed, a label and a tuple of indices, so streams never overlap and do
/// not depend on the order in which they are requested.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                 std::initializer_list<std::uint64_t> ids = {}) noexcept {
  std::uint64_t h = splitmix64(root ^ fnv1a64(label));
  for (std::uint64_t id : ids) h = splitmix64(h ^ splitmix64(id + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Rng(seq);
}

}  // namespace asyncscale
