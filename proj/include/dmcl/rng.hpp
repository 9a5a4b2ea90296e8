#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace dmcl {

// All randomness in the library flows through this engine so that a run is
// fully described by its seeds. The state can be serialized for resuming.
using Rng = std::mt19937_64;

// SplitMix64 finalizer, used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for (stream, index), e.g. one per image or per worker.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix_seed(mix_seed(seed ^ mix_seed(stream)) + index);
}

// Uniform double in [0, 1) built from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& text);

}  // namespace dmcl
