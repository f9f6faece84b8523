#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace catfa {

// Deterministic random source. std::mt19937_64 has a fully specified output
// sequence, but the standard *distributions* do not, so we derive uniform and
// normal variates by hand. Same seed => same stream on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of randomness.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n), n > 0. Modulo bias is irrelevant at our scales but
    // cheap to avoid, so reject the tail.
    uint64_t below(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller (pair cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Normal clipped by rejection to [-2s, 2s], the usual truncated-normal
    // initializer range.
    double trunc_normal(double stddev) {
        double x;
        do {
            x = normal();
        } while (x < -2.0 || x > 2.0);
        return x * stddev;
    }

    // Fisher-Yates shuffle of an index vector.
    template <typename Vec>
    void shuffle(Vec& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace catfa
