#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace flowsplat {

// Deterministic 64-bit generator (splitmix64). We roll our own uniform and
// normal transforms so that generated streams are identical across standard
// library implementations; training reproducibility tests depend on it.
class Rng {
   public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t uniform_index(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // Standard normal via Box-Muller (one value per call, no caching so the
    // stream position is easy to reason about).
    double normal() {
        double u1 = uniform();
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Derives an independent stream; used to decorrelate per-purpose RNGs
    // from one top-level seed.
    Rng fork(uint64_t stream_id) {
        Rng r(next_u64() ^ (0x5851f42d4c957f2dull * (stream_id + 1)));
        return r;
    }

   private:
    uint64_t state_;
};

} // namespace flowsplat
