#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mvd {

using Rng = std::mt19937_64;

// splitmix64; used to derive independent substream seeds from one root seed.
uint64_t splitmix64(uint64_t x);

// Stable seed for a named substream ("dataset", "train", "distill", "eval", ...).
uint64_t derive_seed(uint64_t root, std::string_view name);
uint64_t derive_seed(uint64_t root, std::string_view name, uint64_t index);

// Uniform in [0,1) from the top 53 bits. Hand-rolled so streams are identical
// across standard libraries; std::uniform_real_distribution is not portable.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Inclusive on both ends.
inline int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi) {
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(rng() % span);
}

}  // namespace mvd
