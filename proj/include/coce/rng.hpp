#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace coce {

/// Seedable random source with fully specified output streams.
///
/// The engine is std::mt19937_64, whose sequence is pinned down by the C++
/// standard, and every derived draw (uniform double, Gaussian, bounded int)
/// is computed here with explicit formulas instead of the implementation
/// defined std::*_distribution classes. Given the same seed, the stream of
/// values is therefore identical on any conforming platform with IEEE
/// doubles.
///
///   uniform():      (engine() >> 11) * 2^-53                  in [0, 1)
///   normal():       Box-Muller on two uniforms, pair cached
///   uniform_int(n): unbiased rejection sampling on engine()
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Standard Gaussian draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // 1 - uniform() lies in (0, 1], keeping the log argument positive.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Uniform integer in [0, n). Requires n > 0.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// splitmix64 finalizer; the standard 64-bit avalanche mix.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives an independent child seed from (seed, tag). Used to give each
/// consumer of randomness (data generation, parameter init, per-epoch batch
/// order, ...) its own stream off a single trial seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ splitmix64(tag));
}

}  // namespace coce
