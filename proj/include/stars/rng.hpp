#pragma once

#include <cstdint>
#include <random>

namespace stars {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based stream: draw(k) depends only on (seed, k), so a run can be
/// replayed from any step without carrying generator state around.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed = 0) noexcept : key_(splitmix64(seed)) {}

    std::uint64_t bits(std::uint64_t step, std::uint32_t lane) const noexcept {
        return splitmix64(key_ ^ splitmix64(step * 4 + lane));
    }

    /// Uniform in [0,1) with 53 bits of resolution.
    double uniform(std::uint64_t step, std::uint32_t lane) const noexcept {
        return static_cast<double>(bits(step, lane) >> 11) * 0x1.0p-53;
    }

private:
    std::uint64_t key_;
};

/// Sequential draws use std::mt19937_64, whose output sequence is fixed by the
/// standard; the std distributions are not, so the mappings below are ours.
inline double uniform01(std::mt19937_64& g) noexcept {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n) for n > 0.
inline std::uint64_t uniform_below(std::mt19937_64& g, std::uint64_t n) noexcept {
    return g() % n;
}

} // namespace stars
