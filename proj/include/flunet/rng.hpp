#ifndef FLUNET_RNG_HPP_
#define FLUNET_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>

namespace flunet {

// Seeded RNG with hand-rolled distributions. std::mt19937_64 output is pinned
// by the standard, while std::*_distribution is implementation-defined; rolling
// the distributions here keeps every sampled value identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n). n must be >= 1. Rejection sampling, no modulo bias.
  std::uint64_t uniform(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform double in [0, 1) with 53-bit resolution.
  double uniform_real() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal via Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform_real() - 1.0;
      v = 2.0 * uniform_real() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Normal(0, sigma) resampled until within [-clip, clip].
  double trunc_normal(double sigma, double clip) {
    double x;
    do {
      x = sigma * normal();
    } while (x < -clip || x > clip);
    return x;
  }

  // Stable sub-stream derivation (splitmix64 finalizer over the combined words).
  static std::uint64_t derive(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    auto mix = [](std::uint64_t z) {
      z += 0x9e3779b97f4a7c15ULL;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      return z ^ (z >> 31);
    };
    return mix(mix(mix(base) ^ a) ^ b);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace flunet

#endif  // FLUNET_RNG_HPP_
