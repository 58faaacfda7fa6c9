#pragma once

#include <cstdint>
#include <cmath>

namespace qsgd {

// Finalizer step of splitmix64. Used both as a standalone bit mixer and to
// expand a 64-bit seed into engine state.
inline constexpr std::uint64_t split_mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Component tags for seed derivation. Every independent random stream is
// seeded by derive_seed(base, tag, idx0, idx1) so results do not depend on
// scheduling or execution order.
namespace seed_tag {
inline constexpr std::uint64_t kTarget = 0x5441524745ULL;       // target weights
inline constexpr std::uint64_t kSketch = 0x534B45ULL;           // sketch entries
inline constexpr std::uint64_t kDataStream = 0x44415441ULL;     // (x, y) draws
inline constexpr std::uint64_t kQuantStream = 0x5155414EULL;    // quantizer noise
inline constexpr std::uint64_t kReplication = 0x5245504CULL;    // MC replications
inline constexpr std::uint64_t kProbe = 0x50524F42ULL;          // probe vectors
}  // namespace seed_tag

// Deterministic seed mixing: a chain of splitmix64 finalizers over the base
// seed, a component tag and up to two indices. Collision-free enough for the
// stream counts used here and independent of evaluation order.
inline constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag,
                                           std::uint64_t idx0 = 0,
                                           std::uint64_t idx1 = 0) {
  std::uint64_t h = split_mix64(base);
  h = split_mix64(h ^ tag);
  h = split_mix64(h ^ idx0);
  h = split_mix64(h ^ idx1);
  return h;
}

// xoshiro256++ by Blackman & Vigna: fast, 256-bit state, well tested.
// Self-contained so streams are reproducible across platforms, unlike the
// implementation-defined std:: distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0x853C49E6748FEA9BULL) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) {
      sm += 0x9E3779B97F4A7C15ULL;
      std::uint64_t z = sm;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
      word = z ^ (z >> 31);
    }
    has_spare_ = false;
    spare_ = 0.0;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Marsaglia polar; caches the second variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double factor = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * factor;
    has_spare_ = true;
    return u * factor;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace qsgd
