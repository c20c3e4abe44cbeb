#pragma once

#include <cstdint>

namespace counting {

// Portable deterministic generator (splitmix64). The dataset manifest records
// the algorithm name so files can be regenerated bit-exactly anywhere.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64";

  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi], inclusive. Multiply-shift bounding keeps the
  // mapping identical across platforms.
  int uniform_int(int lo, int hi) {
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    uint64_t x = next_u64();
    // high 64 bits of x * range
    __uint128_t wide = static_cast<__uint128_t>(x) * range;
    return lo + static_cast<int>(wide >> 64);
  }

  // Standard normal via Box-Muller on the portable uniform stream.
  double normal();

  // Derive an independent stream; used to decorrelate per-purpose streams
  // from one user-facing seed.
  Rng fork(uint64_t salt) {
    Rng r(state_ ^ (0x9e3779b97f4a7c15ULL * (salt + 1)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace counting
