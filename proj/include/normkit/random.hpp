#pragma once

// Deterministic random streams. All sampling goes through mt19937_64 with
// explicit transforms so a fixed seed reproduces the same values on every
// standard library.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace normkit {

// Standard deviation of a unit normal truncated to [-2, 2].
inline constexpr double kTruncNormalStdFactor = 0.87962566103423975;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Folds a tag string into a seed, for deriving independent substreams.
inline uint64_t mix_seed(uint64_t seed, std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (char ch : tag) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  return splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * (salt + 1)));
}

class Rng {
public:
  explicit Rng(uint64_t seed) : engine_(seed), seed_of_(seed) {}

  Rng substream(std::string_view tag) const { return Rng(mix_seed(seed_of_, tag)); }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(engine_() % static_cast<uint64_t>(hi - lo + 1));
  }

  // Box-Muller; one spare value cached.
  double normal() {
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

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Truncated normal whose post-truncation standard deviation equals stddev.
  // Draws from a wider base normal, rejecting outside two base deviations.
  double truncated_normal(double stddev) {
    const double base = stddev / kTruncNormalStdFactor;
    for (;;) {
      const double v = base * normal();
      if (std::abs(v) <= 2.0 * base) return v;
    }
  }

  template <typename It>
  void shuffle(It first, It last) {
    const int64_t n = static_cast<int64_t>(last - first);
    for (int64_t i = n - 1; i > 0; --i) {
      const int64_t j = uniform_int(0, i);
      std::swap(first[i], first[j]);
    }
  }

private:
  std::mt19937_64 engine_;
  uint64_t seed_of_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace normkit
