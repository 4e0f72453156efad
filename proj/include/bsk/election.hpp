#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>

#include "bsk/protocol.hpp"

namespace bsk {

enum class EnergyAction {
    send = 0,
    receive,
    commit_op,
    decommit_op,
    mac_op,
    idle_tick,
};

inline const char* to_string(EnergyAction a) {
    switch (a) {
        case EnergyAction::send: return "send";
        case EnergyAction::receive: return "receive";
        case EnergyAction::commit_op: return "commit_op";
        case EnergyAction::decommit_op: return "decommit_op";
        case EnergyAction::mac_op: return "mac_op";
        case EnergyAction::idle_tick: return "idle_tick";
    }
    return "?";
}

inline constexpr int kEnergyActionCount = 6;

struct EnergyCosts {
    double values[kEnergyActionCount] = {0, 0, 0, 0, 0, 0};

    double& operator[](EnergyAction a) { return values[static_cast<int>(a)]; }
    double operator[](EnergyAction a) const { return values[static_cast<int>(a)]; }
};

/// Abstract battery: level only decreases, clamped at zero. The threshold
/// crossing is edge-triggered and fires exactly once per state instance.
struct EnergyState {
    double level = 0.0;
    double threshold = 0.0;
    EnergyCosts costs;
    bool crossing_fired = false;

    std::uint64_t action_counts[kEnergyActionCount] = {0, 0, 0, 0, 0, 0};

    /// Deducts the action's cost; returns true iff this call took the level
    /// below the threshold for the first time.
    bool consume(EnergyAction a) {
        action_counts[static_cast<int>(a)] += 1;
        level = std::max(0.0, level - costs[a]);
        if (!crossing_fired && level < threshold) {
            crossing_fired = true;
            return true;
        }
        return false;
    }

    double spent_by_counts() const {
        double s = 0.0;
        for (int i = 0; i < kEnergyActionCount; ++i)
            s += static_cast<double>(action_counts[i]) * costs.values[i];
        return s;
    }
};

/// One re-election: votes keyed by voter, each voter counted once, result
/// set exactly once.
struct ElectionRound {
    std::uint32_t round_id = 0;
    Timestamp call_ts;
    std::map<std::uint16_t, NodeId> votes;   // voter -> candidate
    std::optional<NodeId> result;
    bool open = false;

    /// First vote per voter wins; repeats are ignored.
    void record_vote(NodeId voter, NodeId candidate) {
        votes.try_emplace(voter.value, candidate);
    }
};

/// Pick the neighbor with the highest energy; ties break to the lowest id.
/// The view must already exclude the current leader and the voter itself.
inline NodeId cast_vote(const std::map<std::uint16_t, double>& neighbor_energy_view) {
    if (neighbor_energy_view.empty())
        throw std::invalid_argument("cast_vote: empty neighbor view");
    NodeId best{neighbor_energy_view.begin()->first};
    double best_energy = neighbor_energy_view.begin()->second;
    for (const auto& [id, energy] : neighbor_energy_view) {
        if (energy > best_energy) {   // strict: equal energy keeps the lower id
            best = NodeId{id};
            best_energy = energy;
        }
    }
    return best;
}

/// Plurality winner; ties break to the higher reported energy, then to the
/// lower id. Returns nullopt when no votes arrived (leader retains the role).
inline std::optional<NodeId> tally_and_assign(const ElectionRound& round,
                                              const std::map<std::uint16_t, double>& energy_view) {
    if (round.votes.empty()) return std::nullopt;

    std::map<std::uint16_t, int> counts;
    for (const auto& [voter, candidate] : round.votes) counts[candidate.value] += 1;

    auto energy_of = [&](std::uint16_t id) {
        auto it = energy_view.find(id);
        return it == energy_view.end() ? 0.0 : it->second;
    };

    // Ascending id iteration with strict-improvement replacement: equal
    // (count, energy) keeps the lower id.
    std::uint16_t winner = counts.begin()->first;
    int winner_count = counts.begin()->second;
    for (const auto& [candidate, n] : counts) {
        if (n > winner_count ||
            (n == winner_count && energy_of(candidate) > energy_of(winner))) {
            winner = candidate;
            winner_count = n;
        }
    }
    return NodeId{winner};
}

} // namespace bsk
