#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsk/analytic.hpp"
#include "bsk/simnet.hpp"

namespace bsk {

/// Detailed single-trial outcome; distance feeds the similarity-threshold
/// report.
struct TrialOutcome {
    bool accepted = false;
    std::size_t witness_distance = 0;
};

inline TrialOutcome run_establishment_trial_detail(const BodySignalModel& body,
                                                   const CodeParams& code, std::uint64_t trial) {
    SplitMix64 rng(fold(body.seed, 0x747269616cULL, trial));
    const BitString r_u = BitString::random(kKeyBits, rng);
    NodeState leader;
    leader.id = NodeId{1};
    leader.is_leader = true;
    leader.keys.r_u = r_u;
    NodeState slave;
    slave.id = NodeId{2};
    slave.keys.r_u = r_u;
    const BitString x_leader = fused_witness(body, 1, trial);
    const BitString x_slave = fused_witness(body, 2, trial);
    const ProtocolMessage msg =
        build_key_distribute(leader, x_leader, code, rng, Timestamp{trial + 1});
    const KeyDistributeOutcome out = process_key_distribute(slave, x_slave, code, msg, rng);
    return {out.result.accepted, hamming(x_leader, x_slave)};
}

/// Fixed pass/fail formulas computed from run metrics. A check that does not
/// apply to the configuration holds vacuously.
inline nlohmann::json compute_verdicts(const SimConfig& cfg, const Metrics& m) {
    nlohmann::json v;
    v["conservation_ok"] = m.conservation_ok;
    v["single_leader_ok"] = m.single_leader_ok;
    v["delivery_sanity_ok"] = m.delivery_sanity_ok;
    v["replay_closure_ok"] = m.replay_closure_ok;
    v["key_agreement_ok"] = m.key_agreement_ok;
    v["no_silent_adversary_accepts"] = m.adversary_silent_accepts == 0;
    v["replay_all_stale"] = cfg.adversary.mode != AdversaryMode::replay ||
                            m.replay_stale_rejects == m.replay_attempts;
    v["confidentiality_ok"] = !m.confidentiality_checked || m.confidentiality_ok;
    v["old_keys_dead"] = m.old_key_rejects == m.old_key_probes;
    const bool noiseless = cfg.p == 0.0 && cfg.drop_rate == 0.0 &&
                           cfg.adversary.mode == AdversaryMode::none;
    // A handover window legitimately produces a few not_keyed rejects while
    // pairwise keys are being rebuilt, so zero rejects is only demanded of
    // runs without an election.
    v["noiseless_full_success"] =
        !noiseless || (m.establishment_attempts > 0 &&
                       m.establishment_accepts == m.establishment_attempts &&
                       (m.election_count > 0 || m.rejects_by_reason.empty()));
    return v;
}

inline bool all_verdicts_pass(const nlohmann::json& verdicts) {
    for (const auto& [key, val] : verdicts.items())
        if (!val.get<bool>()) return false;
    return true;
}

/// Analytic predictions where the channel model defines them.
inline nlohmann::json analytic_json(const SimConfig& cfg) {
    nlohmann::json a;
    const double q = analytic::fused_bit_error_rate(cfg.p, cfg.R);
    const double mu = analytic::witness_mismatch_rate(q);
    a["fused_bit_error_rate"] = q;
    a["witness_mismatch_rate"] = mu;
    a["block_success_rate"] = analytic::block_success_rate(mu, static_cast<int>(cfg.code.min_distance));
    a["establishment_success_rate"] = analytic::establishment_success_rate(
        cfg.p, cfg.R, static_cast<int>(cfg.code.min_distance), static_cast<int>(cfg.code.payload_len));
    return a;
}

struct RunOutput {
    SimConfig config;
    std::string trace_jsonl;
    nlohmann::json metrics_json;
    nlohmann::json report;
    bool pass = false;
};

inline RunOutput execute_run(const SimConfig& cfg) {
    Simulation sim(cfg);
    sim.run();
    RunOutput out;
    out.config = cfg;
    out.trace_jsonl = sim.trace_jsonl();
    out.metrics_json = sim.metrics_json();
    const nlohmann::json verdicts = compute_verdicts(cfg, sim.metrics());
    out.pass = all_verdicts_pass(verdicts);
    out.report = {{"config", config_json(cfg)},
                  {"analytic", analytic_json(cfg)},
                  {"metrics", out.metrics_json},
                  {"verdicts", verdicts},
                  {"pass", out.pass}};
    return out;
}

// ---------------------------------------------------------------------------
// Parameter sweeps
// ---------------------------------------------------------------------------

struct SweepRow {
    double value = 0.0;
    double success_rate = 0.0;
    std::optional<double> analytic;
    std::optional<double> abs_gap;
    std::optional<double> similarity_inconsistency_rate; // t sweeps
};

inline bool sweep_param_known(const std::string& param) {
    return param == "p" || param == "R" || param == "t" || param == "N" || param == "code.D";
}

/// One sweep row for the pairwise-trial parameters (p, R, t, code.D).
inline SweepRow sweep_trial_row(const SimConfig& base, const std::string& param, double value,
                                std::uint64_t trials) {
    SimConfig cfg = base;
    if (param == "p") cfg.p = value;
    if (param == "R") cfg.R = static_cast<int>(value);
    if (param == "t") cfg.t = static_cast<std::size_t>(value);
    if (param == "code.D") {
        cfg.code.min_distance = static_cast<std::size_t>(value);
        cfg.code.codeword_len = cfg.code.payload_len * cfg.code.min_distance;
        if (cfg.t > cfg.code.codeword_len) cfg.t = cfg.code.codeword_len;
    }
    cfg.validate();

    BodySignalModel body;
    body.seed = cfg.seed;
    body.witness_len = cfg.witness_len();
    body.bit_error_prob = cfg.p;
    body.readings_per_fuse = cfg.R;

    std::uint64_t accepted = 0;
    std::uint64_t inconsistent = 0;
    for (std::uint64_t i = 0; i < trials; ++i) {
        const TrialOutcome o = run_establishment_trial_detail(body, cfg.code, i);
        if (o.accepted) ++accepted;
        const bool sim = o.witness_distance <= cfg.t;
        if (sim != o.accepted) ++inconsistent;
    }

    SweepRow row;
    row.value = value;
    row.success_rate = trials == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(trials);
    if (param == "p" || param == "R" || param == "code.D") {
        row.analytic = analytic::establishment_success_rate(
            cfg.p, cfg.R, static_cast<int>(cfg.code.min_distance),
            static_cast<int>(cfg.code.payload_len));
        row.abs_gap = std::abs(row.success_rate - *row.analytic);
    }
    if (param == "t")
        row.similarity_inconsistency_rate =
            trials == 0 ? 0.0 : static_cast<double>(inconsistent) / static_cast<double>(trials);
    return row;
}

/// One sweep row for N: aggregates per-slave acceptance over full runs.
inline SweepRow sweep_full_run_row(const SimConfig& base, double value, std::uint64_t trials) {
    SimConfig cfg = base;
    cfg.node_count = static_cast<int>(value);
    cfg.energy_overrides.clear();
    cfg.validate();
    std::uint64_t attempts = 0;
    std::uint64_t accepts = 0;
    for (std::uint64_t i = 0; i < trials; ++i) {
        SimConfig run_cfg = cfg;
        run_cfg.seed = cfg.seed + i;
        Simulation sim(run_cfg);
        sim.run();
        attempts += sim.metrics().establishment_attempts;
        accepts += sim.metrics().establishment_accepts;
    }
    SweepRow row;
    row.value = value;
    row.success_rate = attempts == 0 ? 0.0 : static_cast<double>(accepts) / static_cast<double>(attempts);
    return row;
}

inline nlohmann::json sweep_json(const SimConfig& base, const std::string& param,
                                 const std::vector<double>& values, std::uint64_t trials) {
    if (!sweep_param_known(param))
        throw ConfigError("param", "unknown sweep parameter '" + param + "'");
    nlohmann::json rows = nlohmann::json::array();
    for (double v : values) {
        const SweepRow row = param == "N" ? sweep_full_run_row(base, v, trials)
                                          : sweep_trial_row(base, param, v, trials);
        nlohmann::json r;
        r["value"] = row.value;
        r["success_rate"] = row.success_rate;
        r["analytic"] = row.analytic ? nlohmann::json(*row.analytic) : nlohmann::json();
        r["abs_gap"] = row.abs_gap ? nlohmann::json(*row.abs_gap) : nlohmann::json();
        if (row.similarity_inconsistency_rate)
            r["similarity_inconsistency_rate"] = *row.similarity_inconsistency_rate;
        rows.push_back(r);
    }
    return {{"param", param}, {"trials", trials}, {"rows", rows}, {"config", config_json(base)}};
}

// ---------------------------------------------------------------------------
// Attack evaluation
// ---------------------------------------------------------------------------

inline nlohmann::json attack_json(const SimConfig& base, AdversaryMode mode) {
    SimConfig cfg = base;
    cfg.adversary.mode = mode;
    if (cfg.adversary.rate <= 0.0 && mode != AdversaryMode::none &&
        mode != AdversaryMode::eavesdrop && mode != AdversaryMode::foreign_body)
        cfg.adversary.rate = 0.25;
    cfg.validate();

    Simulation sim(cfg);
    sim.run();
    const Metrics& m = sim.metrics();

    nlohmann::json rej = nlohmann::json::object();
    for (const auto& [k, v] : m.adversary_rejects_by_reason) rej[k] = v;
    nlohmann::json j;
    j["mode"] = to_string(mode);
    j["attempts"] = m.adversary_attempts;
    j["silent_acceptances"] = m.adversary_silent_accepts;
    j["rejects_by_reason"] = rej;
    j["replay"] = {{"attempts", m.replay_attempts}, {"stale_rejects", m.replay_stale_rejects}};
    j["tamper_attempts"] = m.tamper_attempts;
    j["inject_attempts"] = m.inject_attempts;
    j["foreign_body"] = {{"decommit_attempts", m.foreign_decommit_attempts},
                         {"successes", m.foreign_decommit_successes}};
    j["confidentiality"] = {{"checked", m.confidentiality_checked}, {"ok", m.confidentiality_ok}};
    j["pass"] = m.adversary_silent_accepts == 0 && m.foreign_decommit_successes == 0 &&
                (!m.confidentiality_checked || m.confidentiality_ok);
    j["config"] = config_json(cfg);
    return j;
}

} // namespace bsk
