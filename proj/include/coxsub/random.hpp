#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace coxsub {

// std::mt19937_64 has a fully specified output sequence; every distribution
// drawn from it in this library comes from Boost.Random, whose algorithms are
// header-only and identical across platforms. Together they make seeded runs
// reproducible bit-for-bit.
using Rng = std::mt19937_64;

/// Mixes a master seed with stream labels (replication index, phase tag, ...)
/// into a single 64-bit seed. Uses the SplitMix64 finalizer.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> labels) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(master);
  for (auto label : labels) h = mix(h ^ mix(label));
  return h;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> labels = {}) {
  return Rng(derive_seed(master, labels));
}

}  // namespace coxsub
