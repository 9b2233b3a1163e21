#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace s2nn {

// Seeded RNG built on raw mt19937_64 draws. The std:: distribution classes
// are implementation-defined, which would break byte-identical reruns, so
// the few mappings we need are spelled out here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform over [0, 2^nbits); exact for power-of-two ranges.
    std::uint64_t draw_bits(int nbits) {
        if (nbits >= 64) return gen_();
        return gen_() & ((std::uint64_t{1} << nbits) - 1);
    }

    // Uniform integer in [0, n), rejection sampled.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return v % n;
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller, cosine branch only.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace s2nn
