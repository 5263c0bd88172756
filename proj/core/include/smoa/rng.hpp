#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace smoa {

// Deterministic splitmix64 generator. Identical seeds produce identical
// draw sequences on every platform; no platform RNG is used anywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t x = (state_ += 0x9E3779B97F4A7C15ULL);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // One sample per call (Box-Muller, cosine branch); no cached state so the
  // draw sequence is a pure function of the call count.
  double normal() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Normal truncated to two standard deviations, then scaled.
  double trunc_normal(double stddev) {
    double z = normal();
    while (std::abs(z) > 2.0) z = normal();
    return z * stddev;
  }

  std::uint64_t index(std::uint64_t n) { return next_u64() % n; }

  // Independent substream derived from the original seed and a tag only;
  // insensitive to how many draws the parent has made.
  Rng fork(std::uint64_t tag) const {
    std::uint64_t x = seed_ ^ (0x9E3779B97F4A7C15ULL * (tag + 1));
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return Rng(x ^ (x >> 31));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace smoa
