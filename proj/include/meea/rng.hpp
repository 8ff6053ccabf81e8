#pragma once

#include <cstdint>

namespace meea {

/// Seedable, splittable pseudo-random source (splitmix64 core).
///
/// Standard-library distributions are implementation-defined, so every draw
/// here is mapped by hand; two builds given the same seed emit the same
/// sequence, which the reproducibility contract depends on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  /// Independent child stream; advances this stream by one draw.
  Rng split() { return Rng(next_u64() ^ 0xd1b54a32d192ed03ULL); }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    Rng r(seed ^ (salt * 0x9e3779b97f4a7c15ULL));
    return r.next_u64();
  }

 private:
  std::uint64_t state_;
};

}  // namespace meea
