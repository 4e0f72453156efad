#include <catch2/catch_amalgamated.hpp>

#include "bsk/report.hpp"
#include "bsk/simnet.hpp"

using bsk::AdversaryMode;
using bsk::SimConfig;
using bsk::Simulation;

namespace {

SimConfig base_config() {
    SimConfig cfg;
    cfg.node_count = 8;
    cfg.seed = 1;
    cfg.max_ticks = 200;
    cfg.code = bsk::CodeParams{"repetition", 384, 128, 3};
    cfg.p = 0.0;
    cfg.R = 3;
    cfg.t = 24;
    cfg.epoch_period_ticks = 96;
    cfg.energy_initial = 5000.0;
    cfg.energy_threshold = 10.0;
    cfg.costs[bsk::EnergyAction::send] = 1.0;
    cfg.costs[bsk::EnergyAction::receive] = 0.5;
    cfg.costs[bsk::EnergyAction::commit_op] = 0.8;
    cfg.costs[bsk::EnergyAction::decommit_op] = 0.8;
    cfg.costs[bsk::EnergyAction::mac_op] = 0.2;
    cfg.costs[bsk::EnergyAction::idle_tick] = 0.01;
    cfg.vote_timeout_ticks = 50;
    cfg.beacon_interval_ticks = 20;
    cfg.data_interval_ticks = 10;
    cfg.retry_interval_ticks = 16;
    cfg.mesh = bsk::MeshTopology::ring;
    cfg.drop_rate = 0.0;
    cfg.adversary.mode = AdversaryMode::none;
    return cfg;
}

/// Scripted drain: leader 1 starts low and crosses the threshold mid-run;
/// node 5 is the clear energy maximum every voter sees over the full mesh.
SimConfig election_config() {
    SimConfig cfg = base_config();
    cfg.mesh = bsk::MeshTopology::full;
    cfg.max_ticks = 200;
    cfg.data_interval_ticks = 5;
    cfg.energy_initial = 500.0;
    cfg.energy_overrides[1] = 60.0;
    cfg.energy_overrides[5] = 900.0;
    cfg.energy_threshold = 20.0;
    return cfg;
}

} // namespace

TEST_CASE("identical configs produce byte-identical traces and metrics") {
    const SimConfig cfg = base_config();
    Simulation a(cfg), b(cfg);
    a.run();
    b.run();
    REQUIRE(a.trace_jsonl() == b.trace_jsonl());
    REQUIRE(a.metrics_json().dump() == b.metrics_json().dump());
    REQUIRE_FALSE(a.trace_jsonl().empty());

    SimConfig other = cfg;
    other.seed = 2;
    Simulation c(other);
    c.run();
    REQUIRE(a.trace_jsonl() != c.trace_jsonl());
}

TEST_CASE("noiseless run establishes everywhere with zero rejects") {
    Simulation sim(base_config());
    sim.run();
    const bsk::Metrics& m = sim.metrics();

    REQUIRE(m.establishment_attempts >= 7);
    REQUIRE(m.establishment_accepts == m.establishment_attempts);
    REQUIRE(m.rejects_by_reason.empty());
    REQUIRE(m.key_agreement_ok);
    REQUIRE(m.nodes_in_agreement == 7);
    REQUIRE(m.key_epoch_min == 1);
    REQUIRE(m.key_epoch_max == 1);
    REQUIRE(m.epochs_completed == 2);
    REQUIRE(m.conservation_ok);
    REQUIRE(m.single_leader_ok);
    REQUIRE(m.delivery_sanity_ok);
    REQUIRE(m.election_count == 0);

    // Slaves derived identical group keys, pairwise keys match the leader's map.
    const bsk::NodeState& leader = sim.node_state(sim.leader());
    for (std::uint16_t id = 2; id <= 8; ++id) {
        const bsk::NodeState& s = sim.node_state(id);
        REQUIRE(*s.keys.ks == *leader.keys.ks);
        REQUIRE(*s.keys.k_msi_own == leader.keys.k_msi_peers.at(id));
        REQUIRE(s.keys.consistent());
    }
}

TEST_CASE("scripted drain elects the highest-energy node and re-keys") {
    Simulation sim(election_config());
    sim.run();
    const bsk::Metrics& m = sim.metrics();

    REQUIRE(m.election_calls == 1);
    REQUIRE(m.election_count == 1);
    REQUIRE(sim.leader() == 5);

    REQUIRE(m.key_epoch_min == 2);
    REQUIRE(m.key_epoch_max == 2);
    REQUIRE(m.key_agreement_ok);
    REQUIRE(m.nodes_in_agreement == 7);
    REQUIRE(m.single_leader_ok);
    REQUIRE(m.conservation_ok);

    // Old leader now serves as a slave with a valid pairwise key.
    const bsk::NodeState& new_leader = sim.node_state(5);
    const bsk::NodeState& old_leader = sim.node_state(1);
    REQUIRE_FALSE(old_leader.is_leader);
    REQUIRE(*old_leader.keys.k_msi_own == new_leader.keys.k_msi_peers.at(1));

    // Forwarded commitments were decommitted by the new leader.
    REQUIRE(m.handover_forwards > 0);
    REQUIRE(m.handover_decommit_ok == m.handover_forwards);

    // Liveness: the assignment landed within the vote timeout of the call.
    std::uint64_t call_tick = 0, assign_tick = 0;
    for (const bsk::TraceEvent& e : sim.trace()) {
        if (e.kind == "election" && e.reason.rfind("call:", 0) == 0) call_tick = e.tick;
        if (e.kind == "election" && e.reason == "assign") assign_tick = e.tick;
    }
    REQUIRE(assign_tick >= call_tick);
    REQUIRE(assign_tick - call_tick <= sim.config().vote_timeout_ticks);

    // Anything keyed under the superseded group key is dead.
    REQUIRE(sim.group_key_history().size() == 2);
    REQUIRE(m.old_key_probes > 0);
    REQUIRE(m.old_key_rejects == m.old_key_probes);

    const bsk::BitString old_ks = sim.group_key_history().front();
    for (std::uint16_t id = 1; id <= 8; ++id) {
        bsk::NodeState clone = sim.node_state(id);
        const std::uint8_t payload[3] = {1, 2, 3};
        const bsk::ProtocolMessage stale_keyed =
            bsk::seal_data(old_ks, bsk::NodeId{0xfffd}, payload, bsk::Timestamp{100000});
        REQUIRE(bsk::open_data(*clone.keys.ks, clone, stale_keyed).result.reason ==
                bsk::RejectReason::bad_mac);
    }
}

TEST_CASE("replayed messages are always stale") {
    SimConfig cfg = base_config();
    cfg.adversary.mode = AdversaryMode::replay;
    cfg.adversary.rate = 0.5;
    cfg.max_ticks = 400;
    Simulation sim(cfg);
    sim.run();
    const bsk::Metrics& m = sim.metrics();
    REQUIRE(m.replay_attempts > 50);
    REQUIRE(m.replay_stale_rejects == m.replay_attempts);
    REQUIRE(m.adversary_silent_accepts == 0);
}

TEST_CASE("tampered deliveries are never accepted") {
    SimConfig cfg = base_config();
    cfg.adversary.mode = AdversaryMode::tamper;
    cfg.adversary.rate = 0.3;
    cfg.max_ticks = 400;
    Simulation sim(cfg);
    sim.run();
    const bsk::Metrics& m = sim.metrics();
    REQUIRE(m.tamper_attempts > 100);
    REQUIRE(m.adversary_silent_accepts == 0);
}

TEST_CASE("injected messages under random keys are rejected") {
    SimConfig cfg = base_config();
    cfg.adversary.mode = AdversaryMode::inject;
    cfg.adversary.rate = 0.8;
    cfg.max_ticks = 300;
    Simulation sim(cfg);
    sim.run();
    const bsk::Metrics& m = sim.metrics();
    REQUIRE(m.inject_attempts > 100);
    REQUIRE(m.adversary_silent_accepts == 0);
}

TEST_CASE("eavesdropper transcript never contains key material") {
    SimConfig cfg = base_config();
    cfg.adversary.mode = AdversaryMode::eavesdrop;
    cfg.max_ticks = 300;
    Simulation sim(cfg);
    sim.run();
    REQUIRE(sim.metrics().confidentiality_checked);
    REQUIRE(sim.metrics().confidentiality_ok);
}

TEST_CASE("foreign-body witnesses never decommit") {
    SimConfig cfg = base_config();
    cfg.adversary.mode = AdversaryMode::foreign_body;
    cfg.adversary.foreign_seed = 4242;
    cfg.max_ticks = 300;
    Simulation sim(cfg);
    sim.run();
    const bsk::Metrics& m = sim.metrics();
    REQUIRE(m.foreign_decommit_attempts > 0);
    REQUIRE(m.foreign_decommit_successes == 0);
}

TEST_CASE("lossy links recover through retries") {
    SimConfig cfg = base_config();
    cfg.drop_rate = 0.2;
    cfg.max_ticks = 300;
    Simulation sim(cfg);
    sim.run();
    const bsk::Metrics& m = sim.metrics();
    REQUIRE(m.msgs_dropped > 0);
    REQUIRE(m.key_agreement_ok);
    REQUIRE(m.nodes_in_agreement == 7);
    REQUIRE(m.delivery_sanity_ok);
}

TEST_CASE("noisy channel matches the analytic success rate loosely") {
    // Tighter bounds live in the acceptance suite; this is a sanity check
    // that the full simulator path tracks the formula at a noisier p.
    // max_ticks is kept below the retry interval: retries re-deliver to the
    // same witness pairs and would oversample failures, while the analytic
    // rate is the probability for a fresh pair.
    SimConfig cfg = base_config();
    cfg.p = 0.05;
    cfg.max_ticks = 4;
    std::uint64_t attempts = 0;
    std::uint64_t accepts = 0;
    for (std::uint64_t s = 0; s < 60; ++s) {
        SimConfig c = cfg;
        c.seed = 1000 + s;
        Simulation sim(c);
        sim.run();
        attempts += sim.metrics().establishment_attempts;
        accepts += sim.metrics().establishment_accepts;
    }
    REQUIRE(attempts == 60 * 7);
    const double rate = static_cast<double>(accepts) / static_cast<double>(attempts);
    const double predicted = bsk::analytic::establishment_success_rate(0.05, 3, 3, 128);
    REQUIRE(std::abs(rate - predicted) < 0.1);
}

TEST_CASE("establishment trial helper is deterministic") {
    bsk::BodySignalModel body;
    body.seed = 5;
    body.witness_len = 384;
    body.bit_error_prob = 0.01;
    body.readings_per_fuse = 3;
    const bsk::CodeParams code{"repetition", 384, 128, 3};
    REQUIRE(bsk::run_establishment_trial(body, code, 0) ==
            bsk::run_establishment_trial(body, code, 0));
    std::uint64_t ok = 0;
    for (std::uint64_t i = 0; i < 200; ++i)
        if (bsk::run_establishment_trial(body, code, i)) ++ok;
    REQUIRE(ok > 190); // s(0.01) is about 0.99986
}
