#pragma once

#include "mbsde/linalg.hpp"

#include <cstdint>
#include <random>

namespace mbsde {

/// Independent generator for stream `index` of a run seeded with `seed`.
///
/// Streams are keyed by (seed, index), so changing how many streams a run
/// uses never shifts the numbers drawn by an existing stream.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      0x6d627364u};
    return std::mt19937_64(seq);
}

/// Salt for deriving unrelated seeds from one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline Vec standard_normal(std::mt19937_64& rng, Eigen::Index n) {
    std::normal_distribution<double> normal;
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace mbsde
