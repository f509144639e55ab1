#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace swinfe {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; mixes several stream identifiers into one seed.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (std::uint64_t p : parts) {
        std::uint64_t z = h ^ (p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        h = z ^ (z >> 31);
    }
    return h;
}

inline Rng make_rng(std::initializer_list<std::uint64_t> parts) { return Rng(mix_seed(parts)); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Inclusive integer range.
inline long uniform_int(Rng& rng, long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng); }

/// Normal(0, std) truncated to [-2 std, 2 std] by rejection.
template <typename T>
void fill_trunc_normal(std::span<T> out, double stddev, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : out) {
        double z;
        do {
            z = nd(rng);
        } while (std::abs(z) > 2.0);
        v = static_cast<T>(z * stddev);
    }
}

template <typename T>
void fill_uniform(std::span<T> out, double lo, double hi, Rng& rng) {
    for (auto& v : out) v = static_cast<T>(uniform(rng, lo, hi));
}

}  // namespace swinfe
