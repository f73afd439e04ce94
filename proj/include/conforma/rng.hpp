#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace conforma {

/// Splittable counter-based random stream. Every consumer of randomness in
/// this library receives an explicit Rng; there is no global generator.
/// Output i of a stream is a pure function of (key, i), and child streams
/// are pure functions of (key, tag), so results are reproducible regardless
/// of evaluation order or thread schedule.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x9E3779B97F4A7C15ULL)) {}

  /// Derive an independent stream. Children with distinct tags are
  /// statistically independent of each other and of the parent.
  Rng child(std::uint64_t tag) const {
    return Rng(raw(mix(key_ ^ mix(tag + 0x632BE59BD9B4E019ULL))));
  }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (cosine branch only, no cached spare).
  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Unbiased integer in [0, n), n >= 1.
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t x, r;
    do {
      x = next_u64();
      r = x % n;
    } while (x - r > static_cast<std::uint64_t>(-static_cast<std::int64_t>(n)));
    return r;
  }

  int index(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  struct RawTag {};
  Rng(std::uint64_t key, RawTag) : key_(key) {}
  static Rng raw(std::uint64_t key) { return Rng(key, RawTag{}); }

  // SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace conforma
