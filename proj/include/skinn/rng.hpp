#pragma once

#include <cstdint>
#include <random>

namespace skinn {

// SplitMix64 finalizer, used only for seed derivation.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Purposes a root seed is split into. Every stochastic component draws its
// seed as split_seed(root, purpose, counter), so adding a consumer never
// shifts the draws of another.
enum class Stream : std::uint64_t {
  ParamInit = 1,
  Collocation = 2,
  Simulation = 3,
  Noise = 4,
  Boundary = 5,
  Shuffle = 6,
  Generic = 7,
};

inline std::uint64_t split_seed(std::uint64_t root, Stream s, std::uint64_t counter = 0) {
  std::uint64_t h = mix64(root ^ mix64(static_cast<std::uint64_t>(s)));
  return mix64(h ^ mix64(counter + 0x632be59bd9b4e019ULL));
}

/**
 * Deterministic RNG: mt19937_64 (bit-specified by the standard) with
 * hand-rolled output maps, so streams are reproducible across platforms.
 * std::normal_distribution is implementation-defined and deliberately avoided.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  Rng(std::uint64_t root, Stream s, std::uint64_t counter = 0)
      : eng_(split_seed(root, s, counter)) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform on [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // uniform on (0, 1]; safe as a log() argument
  double uniform_pos() { return static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased enough for shuffles; 128-bit multiply avoids modulo bias in practice
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(eng_()) * n) >> 64);
  }

  // Box-Muller with a cached spare
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double rad = std::sqrt(-2.0 * std::log(u1));
    double ang = 6.283185307179586476925286766559 * u2;
    spare_ = rad * std::sin(ang);
    has_spare_ = true;
    return rad * std::cos(ang);
  }

  void discard_spare() { has_spare_ = false; }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace skinn
