#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace sconf {

// All randomness in the library flows through mt19937_64 plus the helpers
// below. Distribution sampling is hand-rolled (std:: distributions are
// implementation-defined), so a seed pins the exact stream.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Stateless seed derivation; used to give sub-tasks independent streams.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  return splitmix64(base ^ (0x9E3779B97F4A7C15ull * (salt + 0x632BE59BD9B4E019ull)));
}

inline double unit_from_bits(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;  // [0, 1)
}

// One uniform draw keyed by (seed, row, label). Evaluation-order and
// thread-count independent, which keeps randomized scoring deterministic.
inline double uniform_for(std::uint64_t seed, std::uint64_t row, std::uint64_t label) {
  return unit_from_bits(splitmix64(mix_seed(mix_seed(seed, row), label)));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform01() { return unit_from_bits(eng_()); }

  // Box-Muller with a cached spare; the pair order is part of the stream.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Unbiased draw from [0, n) by rejection.
  std::size_t uniform_index(std::size_t n) {
    const std::uint64_t nn = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % nn;
    std::uint64_t x = 0;
    do {
      x = eng_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % nn);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sconf
