#pragma once

#include <cstdint>
#include <initializer_list>

namespace placekit {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Combines a base seed with any number of stream identifiers.
constexpr std::uint64_t derive_seed(std::uint64_t base,
                                    std::initializer_list<std::uint64_t> ids) {
  std::uint64_t s = mix64(base);
  for (std::uint64_t id : ids)
    s = mix64(s ^ mix64(id + 0x632be59bd9b4e019ULL));
  return s;
}

/// Uniform double in [0, 1) from a 64-bit hash.
constexpr double hash_uniform(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

} // namespace placekit
