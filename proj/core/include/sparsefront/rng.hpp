#pragma once

#include <cstdint>
#include <random>

namespace sparsefront {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to turn (master seed, stream, counter) triples
/// into independent engine seeds, so per-trial and per-image streams do not
/// depend on how work is split across workers.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(mix64(master) ^ stream) ^ index);
}

inline Rng make_rng(std::uint64_t master, std::uint64_t stream = 0, std::uint64_t index = 0) {
  return Rng(derive_seed(master, stream, index));
}

// Stream identifiers keep the derived sequences of different subsystems apart.
namespace streams {
inline constexpr std::uint64_t kLinearTraining = 0x4c494e;
inline constexpr std::uint64_t kNetworkInit = 0x4e4949;
inline constexpr std::uint64_t kNetworkShuffle = 0x4e5348;
inline constexpr std::uint64_t kDropout = 0x44524f;
inline constexpr std::uint64_t kPgdInit = 0x504744;
inline constexpr std::uint64_t kTheoryTrial = 0x544852;
inline constexpr std::uint64_t kPropertyTrial = 0x505250;
}  // namespace streams

}  // namespace sparsefront
