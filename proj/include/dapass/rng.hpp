#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "dapass/common.hpp"

namespace dapass {

// splitmix64. Chosen over std:: distributions because their output is
// implementation-defined and run artifacts must be bit-reproducible across
// platforms.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // [0, n), unbiased
    int64_t uniform_int(int64_t n) {
        require(n > 0, "Rng::uniform_int needs n > 0");
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return static_cast<int64_t>(v % un);
    }

    double uniform_range(double a, double b) { return a + (b - a) * uniform(); }

    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(t);
        have_cached_ = true;
        return r * std::cos(t);
    }

    // Independent child stream; forking never perturbs the parent.
    Rng fork(uint64_t tag) const {
        Rng child(state_ ^ (0x9e3779b97f4a7c15ULL + tag * 0xff51afd7ed558ccdULL));
        child.next_u64();
        return child;
    }

    Rng fork(const std::string& tag) const { return fork(hash_str(tag)); }

    static uint64_t hash_str(const std::string& s) {
        // FNV-1a
        uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

private:
    uint64_t state_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace dapass
