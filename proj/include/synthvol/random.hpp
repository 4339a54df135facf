#pragma once

// Reproducible random streams.
//
// Every draw in the generator comes from a RandomStream whose state is a
// pure function of a key (seed, sample index, stage, channel, ...). Streams
// for different keys are statistically independent, so work can be spread
// over threads without changing results. Distributions are implemented here
// rather than through <random> adaptors, whose outputs vary between standard
// library vendors.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace synthvol {

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds a list of words into one 64-bit key.
inline constexpr std::uint64_t mix_key(std::initializer_list<std::uint64_t> words) noexcept {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (std::uint64_t w : words) {
    std::uint64_t s = h ^ w;
    h = splitmix64(s);
  }
  return h;
}

/// Stage tags used when deriving substreams. Values are part of the
/// reproducibility contract: changing them changes every generated sample.
enum class Stage : std::uint64_t {
  select = 1,
  affine = 2,
  svf = 3,
  gmm = 4,
  synth = 5,
  gamma = 6,
  motion = 7,
  bias = 8,
  alpha = 9,
  reg_error = 10,
  crop = 11,
  phase = 12,
  init = 13,
  misc = 99,
};

/// xoshiro256** generator seeded through splitmix64.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key = 0) noexcept {
    std::uint64_t s = key;
    for (auto& w : state_) w = splitmix64(s);
  }

  /// Substream for (seed, words...). Two calls with equal arguments yield
  /// streams that produce identical sequences.
  static RandomStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> words) noexcept {
    std::uint64_t h = seed;
    for (std::uint64_t w : words) {
      std::uint64_t s = h ^ (w * 0xd1b54a32d192ed03ULL);
      h = splitmix64(s);
    }
    return RandomStream(h);
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t uniform_index(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<__uint128_t>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  /// Normal truncated to [0, inf) by rejection. With stddev 0 the mean is
  /// returned (clamped at zero).
  double truncated_normal_nonneg(double mean, double stddev) noexcept {
    if (stddev <= 0.0) return mean < 0.0 ? 0.0 : mean;
    for (int attempt = 0; attempt < 1'000'000; ++attempt) {
      const double x = normal(mean, stddev);
      if (x >= 0.0) return x;
    }
    // Only reachable for means many standard deviations below zero.
    return 0.0;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace synthvol
