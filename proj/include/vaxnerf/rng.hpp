#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace vaxnerf {

/// Seedable random stream. Independent streams are derived from a root seed
/// plus any number of integer coordinates (iteration, ray index, ...), so a
/// value never depends on how work is split across threads.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : Rng(seed, {}) {}

    Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
        std::uint64_t h = mix(seed ^ 0x6a09e667f3bcc908ULL);
        for (std::uint64_t s : stream) h = mix(h ^ mix(s + 0x9e3779b97f4a7c15ULL));
        std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
        engine_.seed(seq);
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
    }

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

    std::mt19937_64& engine() { return engine_; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
};

}  // namespace vaxnerf
