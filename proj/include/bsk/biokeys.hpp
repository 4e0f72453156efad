#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "bsk/bitstring.hpp"
#include "bsk/rng.hpp"

namespace bsk {

using EpochIndex = std::uint64_t;

/// Synchronization period: all nodes of one body index the same epoch and
/// observe the same ground-truth signal within it.
struct Epoch {
    EpochIndex index = 0;
    std::uint32_t period_ticks = 1;

    static EpochIndex at_tick(std::uint64_t tick, std::uint32_t period_ticks) {
        return tick / period_ticks;
    }
};

/// Abstract model of one body's physiological signal: a fresh uniform
/// ground-truth bit string per epoch, observed by every node through a
/// binary symmetric channel with parameter bit_error_prob.
struct BodySignalModel {
    std::uint64_t seed = 0;
    std::size_t witness_len = 384;   // equals the codeword length M
    double bit_error_prob = 0.0;     // p in [0, 0.5)
    int readings_per_fuse = 3;       // R, odd

    void validate() const {
        if (witness_len == 0) throw std::invalid_argument("BodySignalModel: witness_len must be positive");
        if (bit_error_prob < 0.0 || bit_error_prob >= 0.5)
            throw std::invalid_argument("BodySignalModel: bit_error_prob must be in [0, 0.5)");
        if (readings_per_fuse < 1 || readings_per_fuse % 2 == 0)
            throw std::invalid_argument("BodySignalModel: readings_per_fuse must be odd and positive");
    }
};

namespace detail {
// Stream lane tags; keep stable, traces depend on them.
inline constexpr std::uint64_t kLaneTruth = 0x7472757468ULL;
inline constexpr std::uint64_t kLaneNoise = 0x6e6f697365ULL;
} // namespace detail

/// The common underlying signal all nodes observe in an epoch. Pure function
/// of (seed, epoch).
inline BitString epoch_truth(const BodySignalModel& model, EpochIndex epoch) {
    SplitMix64 g(fold(model.seed, detail::kLaneTruth, epoch));
    return BitString::random(model.witness_len, g);
}

/// One noisy reading: epoch truth with i.i.d. Bernoulli(p) bit flips drawn
/// deterministically from (seed, node, epoch, reading_index).
inline BitString observe(const BodySignalModel& model, std::uint16_t node,
                         EpochIndex epoch, int reading_index) {
    if (reading_index < 0 || reading_index >= model.readings_per_fuse)
        throw std::invalid_argument("observe: reading_index out of range");
    BitString r = epoch_truth(model, epoch);
    SplitMix64 g(fold(model.seed, detail::kLaneNoise,
                      (static_cast<std::uint64_t>(node) << 32) | static_cast<std::uint64_t>(reading_index),
                      epoch));
    for (std::size_t i = 0; i < r.size(); ++i)
        if (g.bernoulli(model.bit_error_prob)) r.flip(i);
    return r;
}

/// Bitwise majority vote over an odd number of equal-length readings.
inline BitString majority_fuse(std::span<const BitString> readings, int expected_R) {
    if (expected_R < 1 || expected_R % 2 == 0)
        throw std::invalid_argument("majority_fuse: R must be odd and positive");
    if (readings.size() != static_cast<std::size_t>(expected_R))
        throw std::invalid_argument("majority_fuse: wrong number of readings");
    const std::size_t len = readings.front().size();
    for (const BitString& r : readings)
        if (r.size() != len) throw std::invalid_argument("majority_fuse: mismatched lengths");

    BitString out = BitString::zeros(len);
    for (std::size_t i = 0; i < len; ++i) {
        int ones = 0;
        for (const BitString& r : readings) ones += r.get(i) ? 1 : 0;
        out.set(i, ones * 2 > expected_R);
    }
    return out;
}

/// Per-node, per-epoch witness: majority fusion of R noisy readings.
inline BitString fused_witness(const BodySignalModel& model, std::uint16_t node,
                               EpochIndex epoch) {
    std::vector<BitString> readings;
    readings.reserve(static_cast<std::size_t>(model.readings_per_fuse));
    for (int r = 0; r < model.readings_per_fuse; ++r)
        readings.push_back(observe(model, node, epoch, r));
    return majority_fuse(readings, model.readings_per_fuse);
}

} // namespace bsk
