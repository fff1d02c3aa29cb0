#include "biembed/rng.hpp"

#include <stdexcept>

namespace biembed {

std::uint64_t SplitMix64::next_below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("SplitMix64::next_below: n must be > 0");
  // Largest multiple of n that fits in 64 bits; reject draws above it.
  const std::uint64_t rem = (UINT64_MAX % n + 1) % n;
  const std::uint64_t limit = UINT64_MAX - rem;
  std::uint64_t r = next_u64();
  while (r > limit) r = next_u64();
  return r % n;
}

namespace {
std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  return mix64(root ^ fnv1a64(label));
}

}  // namespace biembed
