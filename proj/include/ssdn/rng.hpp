#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace ssdn {

// Seeded RNG with portable distributions. std::*_distribution output is
// implementation-defined, so uniform/normal are derived from raw bits here
// to keep datasets and initializers byte-reproducible across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t bits() { return gen_(); }

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive on both ends
  int uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen_() % span);
  }

  double normal() {
    // Box-Muller; one fresh pair per call keeps the stream stateless.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // stable sub-stream derivation (e.g. per scene id, per parameter)
  static uint64_t mix(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static uint64_t mix(uint64_t seed, const std::string& salt) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : salt) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return mix(seed, h);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace ssdn
