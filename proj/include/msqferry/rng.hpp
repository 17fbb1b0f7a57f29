#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace msq {

/// FNV-1a 64-bit hash of a label string; used to derive independent
/// named sub-streams from one user-facing seed.
constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t hash = 1469598103934665603ull;
  for (char character : text) {
    hash ^= static_cast<std::uint64_t>(static_cast<unsigned char>(character));
    hash *= 1099511628211ull;
  }
  return hash;
}

/// splitmix64 step; good seed mixer for mt19937_64.
constexpr std::uint64_t splitmix64(std::uint64_t state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t mixed = state;
  mixed = (mixed ^ (mixed >> 30)) * 0xbf58476d1ce4e5b9ull;
  mixed = (mixed ^ (mixed >> 27)) * 0x94d049bb133111ebull;
  return mixed ^ (mixed >> 31);
}

/// Deterministic random stream. All draws go through explicit formulas
/// (never std:: distributions) so that results are identical across
/// standard library implementations.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  /// Derive an independent stream for a named purpose from a base seed.
  RandomStream(std::uint64_t seed, std::string_view label)
      : engine_(splitmix64(seed ^ splitmix64(fnv1a64(label)))) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1): 53 high bits of a 64-bit draw.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform double in [low, high).
  double uniform(double low, double high) { return low + (high - low) * uniform01(); }

  /// Uniform integer in [0, bound) via rejection sampling (no modulo bias).
  std::uint64_t uniform_index(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = bound * ((~std::uint64_t{0}) / bound);
    std::uint64_t draw;
    do {
      draw = engine_();
    } while (draw >= limit);
    return draw % bound;
  }

  /// Exponential variate with the given rate (mean 1/rate).
  double exponential(double rate) {
    double u = uniform01();
    // 1 - u is in (0, 1]; log is finite.
    return -std::log(1.0 - u) / rate;
  }

  bool bernoulli(double probability) { return uniform01() < probability; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace msq
