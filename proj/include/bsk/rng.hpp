#pragma once

#include <cstdint>

namespace bsk {

/// Counter-based deterministic generator (splitmix64). Every stochastic
/// choice in the library is drawn from one of these, keyed explicitly, so
/// identical inputs reproduce identical bits on any platform.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0,1).
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// One Bernoulli(p) draw, p in [0,1). Exact to double resolution.
    bool bernoulli(double p) {
        if (p <= 0.0) return false;
        return static_cast<double>(next()) < p * 0x1.0p64;
    }

    /// Uniform integer in [0, n). n > 0. Rejection-free modulo is fine here,
    /// the bias at 64 bits is far below anything observable in this artifact.
    std::uint64_t below(std::uint64_t n) { return next() % n; }

private:
    std::uint64_t state_;
};

/// Folds a value into a stream key. Distinct input tuples map to distinct
/// keys except with negligible probability.
inline std::uint64_t fold(std::uint64_t key, std::uint64_t v) {
    std::uint64_t z = key ^ (v + 0x9e3779b97f4a7c15ULL + (key << 6) + (key >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fold(std::uint64_t key, std::uint64_t a, std::uint64_t b) {
    return fold(fold(key, a), b);
}

inline std::uint64_t fold(std::uint64_t key, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
    return fold(fold(key, a, b), c);
}

} // namespace bsk
