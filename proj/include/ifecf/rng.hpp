#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ifecf {

// SplitMix64 finalizer. Used as a stateless counter-based generator so that any
// sample of a synthetic stream can be reproduced without generating its prefix.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
    return mix64(a ^ mix64(b + 0x632be59bd9b4e019ULL));
}

template <class... Rest>
constexpr std::uint64_t hash_key(std::uint64_t first, Rest... rest) noexcept {
    std::uint64_t h = mix64(first);
    ((h = hash_combine(h, static_cast<std::uint64_t>(rest))), ...);
    return h;
}

// Uniform in the open interval (0, 1).
inline double unit_uniform(std::uint64_t h) noexcept {
    return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two derived uniforms.
inline double unit_normal(std::uint64_t h) noexcept {
    const double u1 = unit_uniform(h);
    const double u2 = unit_uniform(mix64(h ^ 0xda942042e4dd58b5ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Sequential generator with the same primitives; bitwise stable across platforms,
// unlike the <random> distributions.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    double uniform() noexcept { return unit_uniform(next()); }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() noexcept { return unit_normal(next()); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

private:
    std::uint64_t state_;
};

}  // namespace ifecf
