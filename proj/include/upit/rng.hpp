// upit/rng.hpp
//
// Deterministic random helpers.  std::mt19937_64 supplies the raw bits,
// but the transforms to uniform/Gaussian/shuffle are spelled out here
// because the std distribution objects are implementation-defined and
// would break bit-reproducibility across standard libraries.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace upit::rng {

using Engine = std::mt19937_64;

/// Mixes a base seed with stream/index tags into an independent engine
/// seed (splitmix64 finalizer), so per-utterance and per-epoch draws do
/// not overlap.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                 std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1) +
                    0xbf58476d1ce4e5b9ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform draw in [0, 1) with 53-bit resolution.
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

/// Uniform draw in [lo, hi).
inline double uniform(Engine& eng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(eng);
}

/// Uniform integer in [0, n); n must be positive.
inline std::uint64_t uniform_index(Engine& eng, std::uint64_t n) {
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
  std::uint64_t v = eng();
  while (v > limit) v = eng();
  return v % n;
}

/// Standard normal via Box-Muller.  Consumes two uniforms per pair and
/// caches the second value.
class Gaussian {
 public:
  double operator()(Engine& eng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(eng);
    while (u1 <= 0.0) u1 = uniform01(eng);
    const double u2 = uniform01(eng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Length-n vector of independent standard normal samples.
inline Eigen::ArrayXd gaussian_vector(Engine& eng, Eigen::Index n) {
  Gaussian g;
  Eigen::ArrayXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = g(eng);
  return out;
}

/// In-place Fisher-Yates shuffle.
template <class T>
void shuffle(std::vector<T>& items, Engine& eng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_index(eng, i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace upit::rng
