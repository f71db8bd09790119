#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace deepdup {

/// All stochastic components draw from this engine. Distribution helpers
/// below are written out by hand so that seeded runs reproduce bit-for-bit
/// across standard library implementations.
using Rng = std::mt19937_64;

/// splitmix64 finalizer; decorrelates child seeds derived from one campaign seed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0)
{
    return Rng{mix_seed(seed, stream)};
}

/// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). Rejection sampling, no modulo bias.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n)
{
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t r;
    do {
        r = rng();
    } while (r >= limit);
    return r % n;
}

inline bool bernoulli(Rng& rng, double p)
{
    return uniform01(rng) < p;
}

/// Box-Muller standard normal; one value per call.
inline double standard_normal(Rng& rng)
{
    double u1 = uniform01(rng);
    while (u1 <= 0.0)
        u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

} // namespace deepdup
