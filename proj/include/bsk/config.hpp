#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "bsk/biokeys.hpp"
#include "bsk/election.hpp"
#include "bsk/fuzzycommit.hpp"

namespace bsk {

/// Raised on any malformed or out-of-range configuration; `field` names the
/// offending entry with its full path, e.g. "code.D".
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& message)
        : std::runtime_error("config error at '" + field + "': " + message),
          field_(std::move(field)) {}

    const std::string& field() const { return field_; }

private:
    std::string field_;
};

enum class AdversaryMode { none, eavesdrop, replay, tamper, inject, foreign_body };

inline const char* to_string(AdversaryMode m) {
    switch (m) {
        case AdversaryMode::none: return "none";
        case AdversaryMode::eavesdrop: return "eavesdrop";
        case AdversaryMode::replay: return "replay";
        case AdversaryMode::tamper: return "tamper";
        case AdversaryMode::inject: return "inject";
        case AdversaryMode::foreign_body: return "foreign_body";
    }
    return "?";
}

inline AdversaryMode adversary_mode_from_string(const std::string& s, const std::string& field) {
    if (s == "none") return AdversaryMode::none;
    if (s == "eavesdrop") return AdversaryMode::eavesdrop;
    if (s == "replay") return AdversaryMode::replay;
    if (s == "tamper") return AdversaryMode::tamper;
    if (s == "inject") return AdversaryMode::inject;
    if (s == "foreign_body") return AdversaryMode::foreign_body;
    throw ConfigError(field, "unknown adversary mode '" + s + "'");
}

struct AdversarySpec {
    AdversaryMode mode = AdversaryMode::none;
    double rate = 0.0;                // fraction of opportunities the adversary acts on
    std::uint64_t foreign_seed = 0;   // body model seed of a foreign_body attacker
};

enum class MeshTopology { ring, full };

struct SimConfig {
    int node_count = 8;               // N sensor nodes, leader included
    std::uint64_t seed = 1;
    std::uint64_t max_ticks = 600;
    CodeParams code;

    double p = 0.01;                  // per-bit reading error probability
    int R = 3;                        // readings fused per witness
    std::size_t t = 24;               // similarity threshold on witnesses
    std::uint32_t epoch_period_ticks = 96;

    double energy_initial = 1000.0;
    std::map<std::uint16_t, double> energy_overrides;
    double energy_threshold = 10.0;
    EnergyCosts costs;

    std::uint32_t vote_timeout_ticks = 50;
    std::uint32_t beacon_interval_ticks = 20;
    std::uint32_t data_interval_ticks = 10;
    std::uint32_t retry_interval_ticks = 16;
    MeshTopology mesh = MeshTopology::ring;
    double drop_rate = 0.0;
    std::string hash_name = "sha256";

    AdversarySpec adversary;

    std::size_t witness_len() const { return code.codeword_len; }

    void validate() const {
        if (node_count < 2) throw ConfigError("node_count", "must be at least 2");
        if (node_count > 0xfffe) throw ConfigError("node_count", "must fit 16-bit node ids");
        if (max_ticks == 0) throw ConfigError("max_ticks", "must be positive");
        try {
            code.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError("code", e.what());
        }
        if (p < 0.0 || p >= 0.5) throw ConfigError("biometric.p", "must be in [0, 0.5)");
        if (R < 1 || R % 2 == 0) throw ConfigError("biometric.R", "must be odd and positive");
        if (t > code.codeword_len)
            throw ConfigError("biometric.t", "must not exceed the witness length M");
        if (epoch_period_ticks == 0) throw ConfigError("biometric.epoch_period_ticks", "must be positive");
        if (energy_threshold <= 0.0) throw ConfigError("energy.threshold", "must be positive");
        if (energy_initial < 0.0) throw ConfigError("energy.initial", "must be non-negative");
        for (const auto& [id, level] : energy_overrides) {
            if (id < 1 || id > node_count)
                throw ConfigError("energy.initial_overrides", "node id " + std::to_string(id) + " out of range");
            if (level < 0.0)
                throw ConfigError("energy.initial_overrides", "level for node " + std::to_string(id) + " is negative");
        }
        for (int i = 0; i < kEnergyActionCount; ++i)
            if (costs.values[i] < 0.0)
                throw ConfigError(std::string("energy.costs.") + to_string(static_cast<EnergyAction>(i)),
                                  "must be non-negative");
        if (vote_timeout_ticks == 0) throw ConfigError("vote_timeout_ticks", "must be positive");
        if (beacon_interval_ticks == 0) throw ConfigError("beacon_interval_ticks", "must be positive");
        if (data_interval_ticks == 0) throw ConfigError("data_interval_ticks", "must be positive");
        if (retry_interval_ticks == 0) throw ConfigError("retry_interval_ticks", "must be positive");
        if (drop_rate < 0.0 || drop_rate > 1.0) throw ConfigError("drop_rate", "must be in [0, 1]");
        if (hash_name != "sha256") throw ConfigError("hash", "only 'sha256' is supported");
        if (adversary.rate < 0.0 || adversary.rate > 1.0)
            throw ConfigError("adversary.rate", "must be in [0, 1]");
    }
};

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const std::string& key,
                                           const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError(path, "missing required field");
    return *it;
}

template <typename T>
T get_as(const nlohmann::json& j, const std::string& key, const std::string& path) {
    const nlohmann::json& v = require_field(j, key, path);
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(path, "wrong type");
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, const std::string& path, T fallback) {
    if (j.find(key) == j.end()) return fallback;
    return get_as<T>(j, key, path);
}

} // namespace detail

/// Parse and validate a configuration document. Field errors carry the
/// offending path.
inline SimConfig parse_config(const nlohmann::json& j) {
    using detail::get_as;
    using detail::get_or;
    if (!j.is_object()) throw ConfigError("(root)", "document must be a JSON object");

    SimConfig c;
    c.node_count = get_as<int>(j, "node_count", "node_count");
    c.seed = get_as<std::uint64_t>(j, "seed", "seed");
    c.max_ticks = get_as<std::uint64_t>(j, "max_ticks", "max_ticks");

    const nlohmann::json& code = detail::require_field(j, "code", "code");
    c.code.name = get_as<std::string>(code, "name", "code.name");
    c.code.codeword_len = get_as<std::size_t>(code, "M", "code.M");
    c.code.payload_len = get_as<std::size_t>(code, "K", "code.K");
    c.code.min_distance = get_as<std::size_t>(code, "D", "code.D");

    const nlohmann::json& bio = detail::require_field(j, "biometric", "biometric");
    c.p = get_as<double>(bio, "p", "biometric.p");
    c.R = get_as<int>(bio, "R", "biometric.R");
    c.t = get_as<std::size_t>(bio, "t", "biometric.t");
    c.epoch_period_ticks = get_as<std::uint32_t>(bio, "epoch_period_ticks", "biometric.epoch_period_ticks");

    const nlohmann::json& energy = detail::require_field(j, "energy", "energy");
    c.energy_initial = get_as<double>(energy, "initial", "energy.initial");
    c.energy_threshold = get_as<double>(energy, "threshold", "energy.threshold");
    if (energy.find("initial_overrides") != energy.end()) {
        const nlohmann::json& ov = energy["initial_overrides"];
        if (!ov.is_object()) throw ConfigError("energy.initial_overrides", "must be an object");
        for (auto it = ov.begin(); it != ov.end(); ++it) {
            int id = 0;
            try {
                id = std::stoi(it.key());
            } catch (const std::exception&) {
                throw ConfigError("energy.initial_overrides", "node key '" + it.key() + "' is not an integer");
            }
            if (!it.value().is_number())
                throw ConfigError("energy.initial_overrides", "level for node " + it.key() + " must be a number");
            c.energy_overrides[static_cast<std::uint16_t>(id)] = it.value().get<double>();
        }
    }
    const nlohmann::json& costs = detail::require_field(energy, "costs", "energy.costs");
    for (int i = 0; i < kEnergyActionCount; ++i) {
        const auto action = static_cast<EnergyAction>(i);
        const std::string key = to_string(action);
        c.costs[action] = get_as<double>(costs, key, "energy.costs." + key);
    }

    c.vote_timeout_ticks = get_as<std::uint32_t>(j, "vote_timeout_ticks", "vote_timeout_ticks");
    c.beacon_interval_ticks = get_or<std::uint32_t>(j, "beacon_interval_ticks", "beacon_interval_ticks", 20);
    c.data_interval_ticks = get_or<std::uint32_t>(j, "data_interval_ticks", "data_interval_ticks", 10);
    c.retry_interval_ticks = get_or<std::uint32_t>(j, "retry_interval_ticks", "retry_interval_ticks", 16);

    const std::string mesh = get_or<std::string>(j, "mesh", "mesh", "ring");
    if (mesh == "ring")
        c.mesh = MeshTopology::ring;
    else if (mesh == "full")
        c.mesh = MeshTopology::full;
    else
        throw ConfigError("mesh", "must be 'ring' or 'full'");

    c.drop_rate = get_or<double>(j, "drop_rate", "drop_rate", 0.0);
    c.hash_name = get_or<std::string>(j, "hash", "hash", "sha256");

    const nlohmann::json& adv = detail::require_field(j, "adversary", "adversary");
    c.adversary.mode =
        adversary_mode_from_string(get_as<std::string>(adv, "mode", "adversary.mode"), "adversary.mode");
    c.adversary.rate = get_as<double>(adv, "rate", "adversary.rate");
    c.adversary.foreign_seed = get_or<std::uint64_t>(adv, "foreign_seed", "adversary.foreign_seed", 0);

    c.validate();
    return c;
}

inline SimConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("(file)", "cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("(file)", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

/// Canonical echo of a config; reports embed this so any report can be
/// regenerated from its own bytes.
inline nlohmann::json config_json(const SimConfig& c) {
    nlohmann::json j;
    j["node_count"] = c.node_count;
    j["seed"] = c.seed;
    j["max_ticks"] = c.max_ticks;
    j["code"] = {{"name", c.code.name},
                 {"M", c.code.codeword_len},
                 {"K", c.code.payload_len},
                 {"D", c.code.min_distance}};
    j["biometric"] = {{"p", c.p}, {"R", c.R}, {"t", c.t}, {"epoch_period_ticks", c.epoch_period_ticks}};
    nlohmann::json costs;
    for (int i = 0; i < kEnergyActionCount; ++i)
        costs[to_string(static_cast<EnergyAction>(i))] = c.costs.values[i];
    nlohmann::json overrides = nlohmann::json::object();
    for (const auto& [id, level] : c.energy_overrides) overrides[std::to_string(id)] = level;
    j["energy"] = {{"initial", c.energy_initial},
                   {"initial_overrides", overrides},
                   {"threshold", c.energy_threshold},
                   {"costs", costs}};
    j["vote_timeout_ticks"] = c.vote_timeout_ticks;
    j["beacon_interval_ticks"] = c.beacon_interval_ticks;
    j["data_interval_ticks"] = c.data_interval_ticks;
    j["retry_interval_ticks"] = c.retry_interval_ticks;
    j["mesh"] = c.mesh == MeshTopology::ring ? "ring" : "full";
    j["drop_rate"] = c.drop_rate;
    j["hash"] = c.hash_name;
    j["adversary"] = {{"mode", to_string(c.adversary.mode)},
                      {"rate", c.adversary.rate},
                      {"foreign_seed", c.adversary.foreign_seed}};
    return j;
}

} // namespace bsk
