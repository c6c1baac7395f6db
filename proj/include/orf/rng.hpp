#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace orf {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Seed for a sub-stream identified by a list of integer tags. The same
// (base, tags) always yields the same seed, independent of call order.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = mix_seed(base);
    for (auto t : tags) s = mix_seed(s ^ mix_seed(t + 0x632be59bd9b4e019ULL));
    return s;
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace orf
