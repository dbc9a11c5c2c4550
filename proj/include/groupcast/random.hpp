#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace groupcast {

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0xD1B54A32D192ED03ULL));
}

/// Seeded i.i.d. standard-normal vectors of fixed dimension.
class NoiseSource {
 public:
  NoiseSource(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim), rng_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t dim() const noexcept { return dim_; }

  std::vector<double> next() {
    std::vector<double> z(dim_);
    for (double& v : z) v = normal_(rng_);
    return z;
  }

  std::vector<std::vector<double>> draw(std::size_t steps) {
    std::vector<std::vector<double>> out;
    out.reserve(steps);
    for (std::size_t i = 0; i < steps; ++i) out.push_back(next());
    return out;
  }

  static std::vector<std::vector<double>> zeros(std::size_t steps, std::size_t dim) {
    return std::vector<std::vector<double>>(steps, std::vector<double>(dim, 0.0));
  }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace groupcast
