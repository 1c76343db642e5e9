#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

namespace ctcdrive {

/// SplitMix64 (Steele, Lea & Flood 2014): a counter-based generator.
///
/// Draw i from a generator seeded with s is mix(s + (i + 1) * 0x9E3779B97F4A7C15)
/// with the standard Stafford "Mix13" finaliser. Every derived quantity
/// (uniform doubles, bounded integers, normals) is defined here in terms of
/// those 64-bit draws, so sequences are identical across compilers and
/// platforms. Independent streams come from `derive`.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next() {
    state_ += kGamma;
    return mix(state_);
  }

  /// Child generator for `stream`; does not advance this one.
  Rng derive(std::uint64_t stream) const { return Rng(mix(state_ ^ mix(stream + kGamma))); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection of the biased tail.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  /// Uniform integer in [lo, hi].
  int range(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("Rng::range: empty interval");
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via the cosine branch of Box-Muller (two draws per value).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace ctcdrive
