#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace rcpg {

using Rng = std::mt19937_64;

/**
Finalizer of the splitmix64 generator. Used to derive well-separated seeds
for independent generator streams from (base seed, salt) pairs, so that
consuming draws on one stream never shifts another.
*/
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t salt) {
    return Rng(mix64(mix64(seed) ^ salt));
}

/// Uniform draw in [0, 1) with 53 random bits.
inline double uniform01(Rng& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

/// Uniform draw from {0, ..., n-1}.
inline int uniform_below(Rng& g, int n) {
    if (n <= 0) throw std::invalid_argument("uniform_below: n must be positive");
    int i = static_cast<int>(uniform01(g) * n);
    return i < n ? i : n - 1;
}

/// Gaussian draw via Box-Muller. Stateless: consumes exactly two raw draws.
inline double normal_sample(Rng& g, double mu, double sigma) {
    double u1 = 1.0 - uniform01(g);  // (0, 1], keeps the log finite
    double u2 = uniform01(g);
    double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(6.283185307179586476925286766559 * u2);
}

/// Sample an index from an (assumed normalized) probability vector.
inline int sample_categorical(std::span<const double> p, Rng& g) {
    double u = uniform01(g);
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;  // guard against rounding shortfall
}

}  // namespace rcpg
