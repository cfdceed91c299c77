#pragma once

#include <cstdint>
#include <random>

namespace pfn {

/// Seeded source built on std::mt19937_64, whose output sequence is fixed by
/// the C++ standard. Doubles are formed from the top 53 bits rather than
/// through std::uniform_real_distribution, whose algorithm is left to the
/// library vendor, so draws reproduce across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform in (0, scale].
  double uniform_positive(double scale) { return scale * (1.0 - uniform()); }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pfn
