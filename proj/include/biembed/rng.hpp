#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace biembed {

// Deterministic 64-bit generator (splitmix64). The standard library engines
// are portable but the distributions are not, so every sampling decision in
// this project goes through this class to keep runs bitwise reproducible.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 bits of mantissa.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Unbiased integer in [0,n) via rejection sampling. n must be > 0.
  std::uint64_t next_below(std::uint64_t n);

  std::size_t next_index(std::size_t n) {
    return static_cast<std::size_t>(next_below(static_cast<std::uint64_t>(n)));
  }

  // Fisher-Yates shuffle driven by this generator.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = next_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Derives an independent per-component seed from one root seed and a label.
// root is xor-ed with the FNV-1a hash of the label, then passed through the
// splitmix64 finalizer. Stable across versions; labels are part of the
// reproducibility contract.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

}  // namespace biembed
