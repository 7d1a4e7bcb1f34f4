#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedhuber {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent substream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Generator for the substream identified by `path` under `seed`. Streams with
// different paths are statistically independent, so the draws of one task do
// not depend on how many other tasks exist or in which order they run.
inline Rng substream(std::uint64_t seed,
                     std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = splitmix64(seed);
  for (const auto id : path) state = splitmix64(state ^ splitmix64(id + 1));
  std::seed_seq seq{static_cast<std::uint32_t>(state),
                    static_cast<std::uint32_t>(state >> 32)};
  return Rng(seq);
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace fedhuber
