#pragma once

#include <cstdint>
#include <random>

namespace odesr {

using Rng = std::mt19937_64;

template <typename T>
T uniform_index(Rng& rng, T n)
{
    return std::uniform_int_distribution<T>(T { 0 }, n - 1)(rng);
}

inline double uniform_real(Rng& rng, double lo = 0.0, double hi = 1.0)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline bool bernoulli(Rng& rng, double p)
{
    return uniform_real(rng) < p;
}

} // namespace odesr
