#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace crcfp {

using Rng = std::mt19937_64;

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent generator from a seed and a list of stream
/// coordinates, e.g. {stream tag, epoch, sample index}. Identical
/// coordinates give identical generators in every process.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t c : coords) h = mix64(h ^ mix64(c));
  return Rng(h);
}

/// Stream tags used by the training loop.
enum class Stream : std::uint64_t {
  kSplit = 1,
  kInit = 2,
  kLabeledOrder = 3,
  kLabeledAugment = 4,
  kUnlabeledOrder = 5,
  kUnlabeledAugment = 6,
  kCrop = 7,
  kPerturb = 8,
  kBank = 9,
  kExport = 10,
};

inline Rng derive_rng(std::uint64_t seed, Stream s, std::uint64_t a = 0, std::uint64_t b = 0) {
  return derive_rng(seed, {static_cast<std::uint64_t>(s), a, b});
}

/// Uniform real in [lo, hi); returns lo when lo == hi.
inline double uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace crcfp
