#pragma once

#include <cstdint>

namespace advsr {

// Deterministic xoshiro256++ generator with hand-rolled draws so that
// results are stable across standard-library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed);

    uint64_t next_u64();

    // Uniform double in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    // Inclusive integer range.
    int uniform_int(int lo, int hi);

    // Standard normal via Box-Muller (second value cached).
    double normal();

    // splitmix64 step, used to derive stream seeds from (seed, index) pairs.
    static uint64_t mix(uint64_t a, uint64_t b);

private:
    uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace advsr
