#pragma once

#include <cmath>
#include <cstdint>

namespace debm {

// Counter-based pseudo-random stream: output i is a SplitMix64-style mix of
// (key, counter). Streams are reproducible across platforms and can be forked
// by a logical index without touching the parent, so parallel workers draw
// identical values no matter how the work is scheduled.
//
// Gaussian draws use Box-Muller on two uniform draws; the second value of the
// pair is cached, so a stream's gaussian sequence is a pure function of
// (key, number of draws).
class Rng {
public:
    explicit Rng(uint64_t key) : key_(key) {}

    uint64_t next_u64() { return mix(key_, ctr_++); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n), n > 0
    uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    float gaussianf() { return static_cast<float>(gaussian()); }

    // Independent substream; does not advance this stream.
    Rng fork(uint64_t stream) const { return Rng(mix(key_ ^ 0xd1b54a32d192ed03ULL, stream)); }

    static uint64_t mix(uint64_t key, uint64_t ctr) {
        uint64_t z = key + 0x9e3779b97f4a7c15ULL * (ctr + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    uint64_t key_;
    uint64_t ctr_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace debm
