#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace covmt::rng {

// Counter-based randomness. Every draw is a pure function of a 64-bit root
// seed, a domain tag, and integer coordinates, so streams are reproducible
// and order-independent regardless of thread scheduling.

namespace domain {
inline constexpr std::uint64_t kSigns = 0x5349474e'00000001ull;
inline constexpr std::uint64_t kTieUniform = 0x54494255'00000002ull;
inline constexpr std::uint64_t kDgpDraws = 0x44475044'00000003ull;
inline constexpr std::uint64_t kDgpCorr = 0x44475043'00000004ull;
inline constexpr std::uint64_t kReplication = 0x5245504c'00000005ull;
inline constexpr std::uint64_t kBacktest = 0x42544b54'00000006ull;
inline constexpr std::uint64_t kGridCell = 0x43454c4c'00000007ull;
}  // namespace domain

/// SplitMix64 finalizer, a 64-bit bijective mixer.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

inline constexpr std::uint64_t combine(std::uint64_t h, std::uint64_t v) {
  return mix64((h + kGolden) ^ v);
}

/// Keyed hash of (seed, domain) plus up to three coordinates.
inline constexpr std::uint64_t keyed(std::uint64_t seed, std::uint64_t dom,
                                     std::uint64_t a = 0, std::uint64_t b = 0,
                                     std::uint64_t c = 0) {
  std::uint64_t h = mix64(seed ^ kGolden);
  h = combine(h, dom);
  h = combine(h, a);
  h = combine(h, b);
  h = combine(h, c);
  return h;
}

/// Map 64 random bits to the open interval (0, 1).
inline double to_unit_open(std::uint64_t h) {
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

/// Rademacher sign for coordinate (b, t, i) of a sign-flip replication.
inline double rademacher_sign(std::uint64_t seed, std::uint64_t b, std::uint64_t t,
                              std::uint64_t i) {
  return (keyed(seed, domain::kSigns, b, t, i) >> 63) ? 1.0 : -1.0;
}

/// Tie-breaking uniform for replication b; attempt > 0 redraws on collisions.
inline double tie_uniform(std::uint64_t seed, std::uint64_t b, std::uint64_t attempt = 0) {
  return to_unit_open(keyed(seed, domain::kTieUniform, b, attempt));
}

/// Derive an independent child seed for a named substream.
inline constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t dom,
                                           std::uint64_t index) {
  return keyed(root, dom, index);
}

/**
 * Sequential counter stream for simulation draws. Uniforms come from hashing
 * (key, counter); normals use Box-Muller and Student t draws use the Bailey
 * polar transform, both in closed form so output is identical across
 * platforms and standard libraries.
 */
class CounterStream {
 public:
  explicit CounterStream(std::uint64_t key) : key_(key) {}

  double uniform() { return to_unit_open(mix64(key_ ^ mix64(counter_++ + kGolden))); }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Student t with nu degrees of freedom (not standardized).
  double student_t(double nu) {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(nu * (std::pow(u1, -2.0 / nu) - 1.0)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Gamma draw with shape a >= 1 and unit scale (Marsaglia-Tsang squeeze).
  double gamma_shape(double a) {
    const double d = a - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Chi-square draw with nu degrees of freedom.
  double chi_square(double nu) { return 2.0 * gamma_shape(0.5 * nu); }

  /// Triangular distribution on [0, 1] with mode 1, via inverse CDF.
  double triangular_mode1() { return std::sqrt(uniform()); }

  /// Uniform integer in [0, bound), for shuffles.
  std::uint64_t below(std::uint64_t bound) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(bound)) % bound;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace covmt::rng
