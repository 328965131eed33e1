#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace longshort {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

/// Stream seed for a named purpose under a root seed: splitmix64(root ^ fnv1a64(label)).
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

/// mt19937_64 with distributions implemented here so streams are identical
/// across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform integer in [lo, hi], rejection sampled.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    double normal(double mean = 0.0, double stddev = 1.0);
    bool bit() { return (engine_() >> 63) != 0; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace longshort
