#pragma once

#include <cstdint>
#include <random>

namespace kfcn {

/// SplitMix64 step; used to derive well-separated seeds for substreams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Deterministic per-item RNG substream. Work item `index` of a run seeded
/// with `seed` always sees the same stream, regardless of worker count.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index) {
    return std::mt19937_64(splitmix64(splitmix64(seed) ^ (index + 1)));
}

}  // namespace kfcn
