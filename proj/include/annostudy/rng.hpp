#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace annostudy {

// Seeded generator whose derived draws do not depend on the standard
// library's distribution implementations. std::mt19937_64's raw output is
// fixed by the standard; everything built on top of it lives here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, n). Rejection sampling keeps it unbiased.
  std::size_t uniform_index(std::size_t n);

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform01() < p; }

  double normal(double mean, double sd);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      using std::swap;
      swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 mix of (base, stream); used to give sub-components independent
// but reproducible seeds.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace annostudy
