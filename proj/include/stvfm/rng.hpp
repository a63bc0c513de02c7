#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace stvfm {

// mt19937 with hand-rolled distributions. std::uniform_real_distribution and
// std::normal_distribution are implementation-defined, which would break the
// bit-identical-checkpoints contract across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

    uint32_t next_u32() { return gen_(); }

    // uniform in [0, 1) with 24 bits of mantissa
    float uniform() { return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes two draws per call
    float normal() {
        float u1 = uniform();
        float u2 = uniform();
        if (u1 < 1e-12f) u1 = 1e-12f;
        double r = std::sqrt(-2.0 * std::log(static_cast<double>(u1)));
        double th = 2.0 * 3.14159265358979323846 * static_cast<double>(u2);
        return static_cast<float>(r * std::cos(th));
    }

    float normal(float mean, float stddev) { return mean + stddev * normal(); }

    // unbiased integer in [0, n) via rejection
    uint32_t below(uint32_t n) {
        if (n <= 1) return 0;
        const uint32_t limit = UINT32_MAX - (UINT32_MAX % n);
        uint32_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

private:
    std::mt19937 gen_;
};

} // namespace stvfm
