#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace geoprox {

/// SplitMix64 finalizer; the mixing step of the counter-based generator.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives a named substream seed ("dataset", "init", "noise", ...) from a root seed.
constexpr std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(root ^ mix64(h));
}

/// Counter-based generator: draw k of stream s is a pure function of (s, k).
/// Normals use Box-Muller on two uniforms so results do not depend on the
/// standard library's distribution implementations.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t bits(std::uint64_t counter, std::uint64_t lane = 0) const {
    return mix64(seed_ ^ mix64(counter ^ mix64(lane + 0x632be59bd9b4e019ULL)));
  }

  /// Uniform in the open interval (0, 1).
  double uniform(std::uint64_t counter) const { return to_unit(bits(counter)); }

  double normal(std::uint64_t counter) const {
    const double u1 = to_unit(bits(counter, 1));
    const double u2 = to_unit(bits(counter, 2));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static double to_unit(std::uint64_t b) { return (static_cast<double>(b >> 11) + 0.5) * 0x1.0p-53; }

  std::uint64_t seed_;
};

/// Sequential view over a CounterRng.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return rng_.uniform(counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return rng_.normal(counter_++); }
  std::uint64_t bits() { return rng_.bits(counter_++); }
  bool coin() { return (bits() >> 63) != 0; }

 private:
  CounterRng rng_;
  std::uint64_t counter_ = 0;
};

}  // namespace geoprox
