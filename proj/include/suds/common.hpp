#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace suds {

using Real = double;

// Deterministic RNG. std::*_distribution output is implementation-defined,
// so uniform/normal draws are produced here from raw mt19937_64 words to keep
// seed -> bits reproducible across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1), 53-bit resolution.
    Real uniform01() {
        return static_cast<Real>(eng_() >> 11) * 0x1.0p-53;
    }

    Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; draws two uniforms per call, discards the second branch.
    Real normal(Real mean = 0.0, Real sigma = 1.0) {
        Real u1 = uniform01();
        Real u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const Real r = std::sqrt(-2.0 * std::log(u1));
        return mean + sigma * r * std::cos(2.0 * M_PI * u2);
    }

    // Index in [0, n).
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(eng_() % static_cast<std::uint64_t>(n));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 eng_;
};

// Derives an independent stream from (seed, stream id), splitmix64 finalizer.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline bool all_finite(const std::vector<Real>& v) {
    for (Real x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

constexpr std::int64_t kNsPerSecond = 1'000'000'000;
constexpr std::int64_t kNsPerMinute = 60 * kNsPerSecond;
constexpr std::int64_t kNsPerHour = 60 * kNsPerMinute;

}  // namespace suds
