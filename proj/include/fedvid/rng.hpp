#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <vector>

#include "fedvid/error.hpp"

// Self-contained deterministic randomness. The C++ standard pins the engine
// sequences but not the distributions, so every draw used by the simulator
// (uniform, bounded int, gaussian via Box-Muller) is spelled out here and the
// whole pipeline is reproducible bit-for-bit from its seeds.

namespace fedvid {

// One splitmix64 step: advances `state` and returns the next output.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Deterministic sub-seed derivation: folds each part into the seed through
// splitmix64. mix(seed, a, b) != mix(seed, b, a) in general, which is what we
// want for domain separation.
inline std::uint64_t mix(std::uint64_t seed) {
  std::uint64_t s = seed;
  return splitmix64_next(s);
}

template <class... Rest>
std::uint64_t mix(std::uint64_t seed, std::uint64_t part, Rest... rest) {
  std::uint64_t s = seed;
  std::uint64_t h = splitmix64_next(s);
  s = h ^ part;
  std::uint64_t folded = splitmix64_next(s);
  if constexpr (sizeof...(rest) == 0) {
    return folded;
  } else {
    return mix(folded, static_cast<std::uint64_t>(rest)...);
  }
}

// Stream tags passed to mix() so that different uses of the same master seed
// never share a stream (round indices and client ids overlap numerically).
namespace stream {
inline constexpr std::uint64_t dataset_seed = 0xD5u;
inline constexpr std::uint64_t partition_seed = 0xFAu;
inline constexpr std::uint64_t global_init = 0x61u;
inline constexpr std::uint64_t client_sample = 0xC5u;
inline constexpr std::uint64_t local_train = 0x17u;
inline constexpr std::uint64_t head_init = 0x8Eu;
inline constexpr std::uint64_t epoch_shuffle = 0xE5u;
inline constexpr std::uint64_t centralized = 0xCEu;
inline constexpr std::uint64_t landscape_head = 0x1Au;
inline constexpr std::uint64_t probe = 0x9Bu;
}  // namespace stream

// xoshiro256++ seeded through splitmix64.
class Rng {
public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = splitmix64_next(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1), 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + next_double() * (hi - lo); }

  // Unbiased uniform integer in [0, n) by rejection.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw Error(ErrorKind::config, "next_below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t x = next_u64();
      if (x >= threshold) return x % n;
    }
  }

  // Standard normal via Box-Muller; the sine partner is cached, so draws come
  // in deterministic pairs.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;  // keep log() finite
    const double u2 = next_double();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi_v<double> * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Uniform sample of m distinct values from [0, n), returned sorted.
  std::vector<int> sample_without_replacement(int n, int m) {
    if (m > n || m < 0) {
      throw Error(ErrorKind::config, "sample_without_replacement: m must be in [0, n]");
    }
    std::vector<int> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < m; ++i) {
      const int j = i + static_cast<int>(next_below(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    std::vector<int> picked(pool.begin(), pool.begin() + m);
    std::sort(picked.begin(), picked.end());
    return picked;
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fedvid
