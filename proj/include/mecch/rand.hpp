#ifndef MECCH_RAND_HPP
#define MECCH_RAND_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace mecch {

using Rng = std::mt19937_64;

// Hand-rolled draws instead of std distributions: the standard pins the
// mt19937_64 bit stream but not the distributions, and reproducibility of
// every sampled value is a contract here.

inline double uniform_real(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
inline uint64_t uniform_index(Rng& rng, uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

inline double normal_real(Rng& rng) {
    // Box-Muller; one value per call keeps the stream position predictable.
    double u1 = uniform_real(rng);
    double u2 = uniform_real(rng);
    while (u1 <= 0.0) u1 = uniform_real(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

} // namespace mecch

#endif // MECCH_RAND_HPP
