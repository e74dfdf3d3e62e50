#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace prunekit {

// xoshiro256** by Blackman & Vigna, seeded through splitmix64. This is the
// single PRNG behind toy-model generation and calibration sampling so that
// every run is reproducible from one integer seed, independent of the
// platform's <random> distributions.

inline uint64_t splitmix64_next(uint64_t & state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct Xoshiro256ss {
    std::array<uint64_t, 4> s;

    explicit Xoshiro256ss(uint64_t seed) {
        uint64_t sm = seed;
        for (auto & word : s) {
            word = splitmix64_next(sm);
        }
    }

    static uint64_t rotl(uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    uint64_t next() {
        const uint64_t result = rotl(s[1] * 5, 7) * 9;
        const uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    // uniform in [0, 1) with 53 bits of randomness
    double next_double() {
        return (double) (next() >> 11) * 0x1.0p-53;
    }

    // uniform in [0, n); modulo draw, bias is irrelevant at the corpus sizes
    // this toolkit handles
    uint64_t next_below(uint64_t n) {
        return next() % n;
    }

    // Box-Muller from two fresh uniforms. No spare caching: one call consumes
    // exactly two raw draws, which keeps generation order trivial to document.
    double next_gaussian() {
        double u1 = next_double();
        if (u1 <= 0.0) {
            u1 = 0x1.0p-53;
        }
        const double u2 = next_double();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }
};

} // namespace prunekit
