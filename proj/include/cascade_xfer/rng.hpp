#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>

namespace cxfer {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `index` of `base_seed`. Streams for distinct
/// (seed, index) pairs are decorrelated, and a stream never depends on how
/// many other streams were drawn before it, so serial and parallel runs
/// consume identical numbers.
constexpr std::uint64_t stream_seed(std::uint64_t base_seed, std::uint64_t index,
                                    std::uint64_t salt = 0) {
  return splitmix64(splitmix64(base_seed ^ splitmix64(salt)) + index);
}

/// Random source with platform-independent uniform and normal draws
/// (the std distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t base_seed, std::uint64_t index, std::uint64_t salt = 0)
      : engine_(stream_seed(base_seed, index, salt)) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Standard normal via Box-Muller; no cached second variate so the stream
  /// position depends only on the number of calls.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Draw an index from a probability row.
  std::size_t categorical(std::span<const double> probs) {
    const double r = uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      acc += probs[i];
      last_positive = i;
      if (r < acc) return i;
    }
    return last_positive;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cxfer
