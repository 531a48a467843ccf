#pragma once

#include <cstdint>
#include <random>

namespace metagrad {

// splitmix64 finaliser; decorrelates per-replicate seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic random stream. Uniform doubles are generated from the raw
// 64-bit output, so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream for replicate r of a run seeded with base_seed.
  static Rng stream(std::uint64_t base_seed, std::uint64_t replicate) {
    return Rng(mix64(mix64(base_seed) ^ (replicate + 0x51ed2701e35f3a6dULL)));
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // uniform in (0, 1]; safe as a log() argument
  double uniform_pos() { return 1.0 - uniform(); }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace metagrad
