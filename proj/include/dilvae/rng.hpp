#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dilvae {

/// Seeded random stream. Streams are split by key so every consumer
/// (layer, epoch, batch) draws from its own reproducible sequence.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform on [0, 1) with 53 bits of mantissa.
    double uniform();
    /// Uniform on the open interval (0, 1); safe for log().
    double uniform_open();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller (no cached second value).
    double normal();
    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n);
    bool bernoulli(double p) { return uniform() < p; }

    /// Independent child stream derived from this stream's seed and a key.
    Rng split(std::string_view key) const;
    Rng split(std::uint64_t key) const;

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key);

} // namespace dilvae
