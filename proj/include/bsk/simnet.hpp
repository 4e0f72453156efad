#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsk/analytic.hpp"
#include "bsk/biokeys.hpp"
#include "bsk/config.hpp"
#include "bsk/election.hpp"
#include "bsk/fuzzycommit.hpp"
#include "bsk/protocol.hpp"

namespace bsk {

/// One line of the run trace. Totally ordered by (tick, seq); the whole
/// trace is a pure function of the SimConfig.
struct TraceEvent {
    std::uint64_t tick = 0;
    std::uint64_t seq = 0;
    std::string kind;        // send|deliver|drop|accept|reject|election|rekey
    std::uint16_t from = 0;
    std::uint16_t to = 0;
    std::string reason;      // reject reason or annotation; empty otherwise
    std::string digest_hex;  // sha256 of the serialized message; empty for non-message events

    std::string to_jsonl() const {
        std::ostringstream os;
        os << "{\"tick\":" << tick << ",\"seq\":" << seq << ",\"kind\":\"" << kind
           << "\",\"from\":" << from << ",\"to\":" << to << ",\"reason\":\"" << reason
           << "\",\"digest_hex\":\"" << digest_hex << "\"}";
        return os.str();
    }
};

struct NodeEnergyReport {
    double initial = 0.0;
    double final_level = 0.0;
    std::uint64_t action_counts[kEnergyActionCount] = {0, 0, 0, 0, 0, 0};
    std::vector<double> timeline;   // level sampled at the end of every tick
};

struct Metrics {
    // key establishment
    std::uint64_t establishment_attempts = 0;  // KeyDistribute deliveries to sensors
    std::uint64_t establishment_accepts = 0;
    std::uint64_t rekey_rounds = 0;            // KeyDistribute rounds started (incl. handover)
    std::uint64_t epochs_completed = 0;
    std::uint64_t key_epoch_min = 0;
    std::uint64_t key_epoch_max = 0;
    bool key_agreement_ok = true;
    std::uint64_t nodes_in_agreement = 0;

    // traffic
    std::uint64_t msgs_sent = 0;
    std::uint64_t msgs_delivered = 0;
    std::uint64_t msgs_dropped = 0;
    std::uint64_t bytes_sent = 0;
    std::map<std::string, std::uint64_t> rejects_by_reason;
    std::uint64_t accepts_total = 0;

    // similarity vs decommit bookkeeping (threshold t against code capability)
    std::uint64_t witness_pairs_checked = 0;
    std::uint64_t similar_pairs = 0;
    std::uint64_t similar_but_decommit_failed = 0;
    std::uint64_t dissimilar_but_decommit_ok = 0;

    // elections
    std::uint64_t election_count = 0;          // completed assignments
    std::uint64_t election_calls = 0;
    std::uint64_t election_no_votes = 0;
    std::uint64_t handover_forwards = 0;
    std::uint64_t handover_decommit_ok = 0;
    std::uint64_t handover_decommit_failed = 0;

    // adversary
    std::uint64_t adversary_attempts = 0;
    std::uint64_t adversary_silent_accepts = 0;
    std::map<std::string, std::uint64_t> adversary_rejects_by_reason;
    std::uint64_t replay_attempts = 0;
    std::uint64_t replay_stale_rejects = 0;
    std::uint64_t tamper_attempts = 0;
    std::uint64_t inject_attempts = 0;
    std::uint64_t foreign_decommit_attempts = 0;
    std::uint64_t foreign_decommit_successes = 0;
    bool confidentiality_checked = false;
    bool confidentiality_ok = true;

    // invariants
    bool conservation_ok = true;
    bool single_leader_ok = true;
    bool delivery_sanity_ok = true;
    bool replay_closure_ok = true;
    std::uint64_t old_key_probes = 0;
    std::uint64_t old_key_rejects = 0;

    std::map<std::uint16_t, NodeEnergyReport> energy;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["establishment"] = {
            {"attempts", establishment_attempts},
            {"accepts", establishment_accepts},
            {"success_rate",
             establishment_attempts == 0
                 ? 1.0
                 : static_cast<double>(establishment_accepts) / static_cast<double>(establishment_attempts)},
            {"rekey_rounds", rekey_rounds},
        };
        j["epochs_completed"] = epochs_completed;
        j["key_epoch"] = {{"min", key_epoch_min}, {"max", key_epoch_max}};
        j["agreement"] = {{"ok", key_agreement_ok}, {"nodes", nodes_in_agreement}};
        j["traffic"] = {{"sent", msgs_sent},
                        {"delivered", msgs_delivered},
                        {"dropped", msgs_dropped},
                        {"bytes_sent", bytes_sent},
                        {"accepts", accepts_total}};
        nlohmann::json rej = nlohmann::json::object();
        for (const auto& [k, v] : rejects_by_reason) rej[k] = v;
        j["rejects_by_reason"] = rej;
        j["similarity"] = {{"pairs_checked", witness_pairs_checked},
                           {"similar_pairs", similar_pairs},
                           {"similar_but_decommit_failed", similar_but_decommit_failed},
                           {"dissimilar_but_decommit_ok", dissimilar_but_decommit_ok}};
        j["election"] = {{"completed", election_count},
                         {"calls", election_calls},
                         {"no_votes", election_no_votes},
                         {"handover_forwards", handover_forwards},
                         {"handover_decommit_ok", handover_decommit_ok},
                         {"handover_decommit_failed", handover_decommit_failed}};
        nlohmann::json advrej = nlohmann::json::object();
        for (const auto& [k, v] : adversary_rejects_by_reason) advrej[k] = v;
        j["adversary"] = {{"attempts", adversary_attempts},
                          {"silent_accepts", adversary_silent_accepts},
                          {"rejects_by_reason", advrej},
                          {"replay_attempts", replay_attempts},
                          {"replay_stale_rejects", replay_stale_rejects},
                          {"tamper_attempts", tamper_attempts},
                          {"inject_attempts", inject_attempts},
                          {"foreign_decommit_attempts", foreign_decommit_attempts},
                          {"foreign_decommit_successes", foreign_decommit_successes},
                          {"confidentiality_checked", confidentiality_checked},
                          {"confidentiality_ok", confidentiality_ok}};
        j["invariants"] = {{"conservation_ok", conservation_ok},
                           {"single_leader_ok", single_leader_ok},
                           {"delivery_sanity_ok", delivery_sanity_ok},
                           {"replay_closure_ok", replay_closure_ok},
                           {"old_key_probes", old_key_probes},
                           {"old_key_rejects", old_key_rejects}};
        nlohmann::json energy_j = nlohmann::json::object();
        for (const auto& [id, rep] : energy) {
            nlohmann::json counts = nlohmann::json::object();
            for (int i = 0; i < kEnergyActionCount; ++i)
                counts[to_string(static_cast<EnergyAction>(i))] = rep.action_counts[i];
            energy_j[std::to_string(id)] = {{"initial", rep.initial},
                                            {"final", rep.final_level},
                                            {"action_counts", counts},
                                            {"timeline", rep.timeline}};
        }
        j["energy"] = energy_j;
        return j;
    }
};

/// Deterministic discrete-event simulator of one body network: hybrid
/// star/mesh topology, message delivery with one-tick latency, energy
/// accounting, leader election with handover re-keying, and optional
/// adversary interference.
class Simulation {
public:
    static constexpr std::uint16_t kServerId = 0;

    explicit Simulation(SimConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        body_.seed = cfg_.seed;
        body_.witness_len = cfg_.witness_len();
        body_.bit_error_prob = cfg_.p;
        body_.readings_per_fuse = cfg_.R;

        foreign_body_ = body_;
        foreign_body_.seed = cfg_.adversary.foreign_seed;

        rng_protocol_ = std::make_unique<SplitMix64>(fold(cfg_.seed, 0x70726f746fULL)); // "proto"
        rng_channel_ = std::make_unique<SplitMix64>(fold(cfg_.seed, 0x6368616eULL));    // "chan"
        rng_adv_ = std::make_unique<SplitMix64>(fold(cfg_.seed, 0x616476ULL));          // "adv"

        SplitMix64 predeploy(fold(cfg_.seed, 0x6b6579ULL)); // "key"
        kn_ = BitString::random(kKeyBits, predeploy);
        r_u_ = BitString::random(kKeyBits, predeploy);

        for (std::uint16_t id = 1; id <= sensor_count(); ++id) {
            SimNode n;
            n.st.id = NodeId{id};
            n.st.keys.kn = kn_;
            n.st.keys.r_u = r_u_;
            n.energy.threshold = cfg_.energy_threshold;
            n.energy.costs = cfg_.costs;
            auto ov = cfg_.energy_overrides.find(id);
            n.energy.level = ov == cfg_.energy_overrides.end() ? cfg_.energy_initial : ov->second;
            n.initial_energy = n.energy.level;
            nodes_.push_back(std::move(n));
        }
        leader_id_ = 1;
        node(1).st.is_leader = true;

        server_.id = NodeId{kServerId};
        server_.keys.kn = kn_;
    }

    void run() {
        if (ran_) throw std::logic_error("Simulation::run: already ran");
        ran_ = true;

        for (tick_ = 0; tick_ <= cfg_.max_ticks; ++tick_) {
            on_epoch_boundary();
            if (tick_ == 0) start_establishment();
            deliver_due();
            run_handover_queue();
            run_retries();
            run_beacons();
            run_data_traffic();
            check_election_progress();
            adversary_tick();
            end_of_tick();
        }
        finalize_metrics();
    }

    const std::vector<TraceEvent>& trace() const { return trace_; }
    const Metrics& metrics() const { return metrics_; }
    const SimConfig& config() const { return cfg_; }

    std::string trace_jsonl() const {
        std::string out;
        for (const TraceEvent& e : trace_) {
            out += e.to_jsonl();
            out += '\n';
        }
        return out;
    }

    nlohmann::json metrics_json() const { return metrics_.to_json(); }

    // Post-run inspection for tests and reporting.
    const NodeState& node_state(std::uint16_t id) const { return node_const(id).st; }
    std::uint16_t leader() const { return leader_id_; }
    std::uint16_t sensor_count() const { return static_cast<std::uint16_t>(cfg_.node_count); }
    /// Group keys of every key epoch so far, oldest first.
    const std::vector<BitString>& group_key_history() const { return group_key_history_; }

private:
    struct SimNode {
        NodeState st;
        EnergyState energy;
        double initial_energy = 0.0;
        std::map<std::uint16_t, double> neighbor_energy;
        BitString witness;
        std::uint64_t witness_epoch = ~0ULL;
        std::uint64_t last_rsi_tick = ~0ULL;
        std::vector<double> timeline;
    };

    enum class Via { normal, replay, tamper, inject };

    struct Delivery {
        std::uint64_t due_tick = 0;
        std::uint64_t order = 0;
        std::uint16_t from = 0;
        std::uint16_t to = 0;
        std::vector<std::uint8_t> bytes;
        Via via = Via::normal;
        // Witness in effect when a commitment-bearing message was built;
        // instrumentation for the similarity-vs-decommit report.
        std::shared_ptr<const BitString> commit_witness;
    };

    // --- node access -------------------------------------------------------

    SimNode& node(std::uint16_t id) { return nodes_.at(static_cast<std::size_t>(id) - 1); }
    const SimNode& node_const(std::uint16_t id) const {
        return nodes_.at(static_cast<std::size_t>(id) - 1);
    }
    bool is_sensor(std::uint16_t id) const { return id >= 1 && id <= sensor_count(); }

    std::vector<std::uint16_t> sensors() const {
        std::vector<std::uint16_t> ids;
        for (std::uint16_t id = 1; id <= sensor_count(); ++id) ids.push_back(id);
        return ids;
    }

    std::vector<std::uint16_t> mesh_neighbors(std::uint16_t id) const {
        std::vector<std::uint16_t> out;
        const std::uint16_t n = sensor_count();
        if (cfg_.mesh == MeshTopology::full || n <= 3) {
            for (std::uint16_t o = 1; o <= n; ++o)
                if (o != id) out.push_back(o);
        } else {
            const std::uint16_t prev = id == 1 ? n : static_cast<std::uint16_t>(id - 1);
            const std::uint16_t next = id == n ? 1 : static_cast<std::uint16_t>(id + 1);
            out.push_back(std::min(prev, next));
            if (prev != next) out.push_back(std::max(prev, next));
        }
        return out;
    }

    // --- tracing -----------------------------------------------------------

    void record(const char* kind, std::uint16_t from, std::uint16_t to, std::string reason,
                std::string digest_hex) {
        trace_.push_back(TraceEvent{tick_, next_seq_++, kind, from, to, std::move(reason),
                                    std::move(digest_hex)});
    }

    static std::string digest_of(const std::vector<std::uint8_t>& bytes) {
        return hex(sha256(bytes));
    }

    // --- energy ------------------------------------------------------------

    void charge(std::uint16_t id, EnergyAction a) {
        if (!is_sensor(id)) return; // server and adversary are not battery powered
        SimNode& n = node(id);
        const bool crossed = n.energy.consume(a);
        if (crossed) on_threshold_crossed(id);
    }

    // --- witnesses ---------------------------------------------------------

    void refresh_witnesses() {
        const EpochIndex epoch = Epoch::at_tick(tick_, cfg_.epoch_period_ticks);
        for (SimNode& n : nodes_) {
            if (n.witness_epoch == epoch) continue;
            n.witness = fused_witness(body_, n.st.id.value, epoch);
            n.witness_epoch = epoch;
        }
        if (cfg_.adversary.mode == AdversaryMode::foreign_body && foreign_witness_epoch_ != epoch) {
            foreign_witness_ = fused_witness(foreign_body_, 1, epoch);
            foreign_witness_epoch_ = epoch;
        }
    }

    // --- scheduling --------------------------------------------------------

    void schedule(std::uint16_t from, std::uint16_t to, std::vector<std::uint8_t> bytes, Via via,
                  std::shared_ptr<const BitString> commit_witness = nullptr) {
        Delivery d;
        d.due_tick = tick_ + 1;
        d.order = next_order_++;
        d.from = from;
        d.to = to;
        d.bytes = std::move(bytes);
        d.via = via;
        d.commit_witness = std::move(commit_witness);
        pending_[d.due_tick].push_back(std::move(d));
    }

    /// One radio transmission (single send cost), fanned out to many
    /// receivers with one-tick latency.
    void transmit(std::uint16_t from, const std::vector<std::uint16_t>& to,
                  const ProtocolMessage& msg,
                  std::shared_ptr<const BitString> commit_witness = nullptr) {
        const std::vector<std::uint8_t> bytes = msg.serialize();
        const std::string digest = digest_of(bytes);
        metrics_.msgs_sent += 1;
        metrics_.bytes_sent += bytes.size();
        charge(from, EnergyAction::send);
        record("send", from, to.size() == 1 ? to.front() : kBroadcast.value, "", digest);
        sent_digests_.insert(digest);
        for (std::uint16_t r : to) schedule(from, r, bytes, Via::normal, commit_witness);
    }

    std::vector<std::uint16_t> broadcast_targets(std::uint16_t from) const {
        std::vector<std::uint16_t> out;
        for (std::uint16_t id = 1; id <= sensor_count(); ++id)
            if (id != from) out.push_back(id);
        return out;
    }

    // --- secrets registry (confidentiality proxy) ---------------------------

    void register_secret(const BitString& b) { secrets_.insert(b.bytes()); }

    void snapshot_secrets(const KeyRing& k) {
        if (k.k_mn) register_secret(*k.k_mn);
        if (k.ks) register_secret(*k.ks);
        if (k.r_si) register_secret(*k.r_si);
        if (k.k_msi_own) register_secret(*k.k_msi_own);
        for (const auto& [id, key] : k.k_msi_peers) register_secret(key);
    }

    // --- protocol phases ----------------------------------------------------

    void on_epoch_boundary() {
        if (tick_ % cfg_.epoch_period_ticks != 0) {
            refresh_witnesses(); // no-op unless first call
            return;
        }
        refresh_witnesses();
        if (tick_ > 0) {
            metrics_.epochs_completed += 1;
            // Slaves refresh their r_si commitments under the new epoch's
            // witness so stored replies stay decommittable at handover.
            for (std::uint16_t id : sensors()) {
                if (id == leader_id_) continue;
                SimNode& n = node(id);
                if (n.st.keys.k_mn && n.st.keys.r_si && n.last_rsi_tick != tick_) send_rsi_reply(id);
            }
        }
    }

    void start_establishment() {
        SimNode& l = node(leader_id_);
        ProtocolMessage msg =
            build_key_distribute(l.st, l.witness, cfg_.code, *rng_protocol_, Timestamp{tick_});
        leader_has_distributed_ = true;
        metrics_.rekey_rounds += 1;
        group_key_history_.push_back(*l.st.keys.ks);
        snapshot_secrets(l.st.keys);
        charge(leader_id_, EnergyAction::commit_op);
        charge(leader_id_, EnergyAction::mac_op);
        record("rekey", leader_id_, kBroadcast.value,
               "key_epoch:" + std::to_string(l.st.keys.key_epoch), "");
        transmit(leader_id_, broadcast_targets(leader_id_), msg,
                 std::make_shared<const BitString>(l.witness));
    }

    void send_rsi_reply(std::uint16_t id) {
        SimNode& n = node(id);
        ProtocolMessage msg = build_rsi_reply(n.st, n.witness, cfg_.code, Timestamp{tick_});
        n.last_rsi_tick = tick_;
        charge(id, EnergyAction::commit_op);
        charge(id, EnergyAction::mac_op);
        transmit(id, {leader_id_}, msg, std::make_shared<const BitString>(n.witness));
    }

    void run_retries() {
        if (tick_ == 0 || tick_ % cfg_.retry_interval_ticks != 0) return;
        if (!leader_has_distributed_) return;
        SimNode& l = node(leader_id_);
        if (!l.st.keys.k_mn) return;
        bool missing = false;
        for (std::uint16_t id : sensors())
            if (id != leader_id_ && !l.st.keys.k_msi_peers.count(id)) missing = true;
        if (!missing) return;
        ProtocolMessage msg = rebuild_key_distribute(l.st, l.witness, cfg_.code, Timestamp{tick_});
        charge(leader_id_, EnergyAction::commit_op);
        charge(leader_id_, EnergyAction::mac_op);
        transmit(leader_id_, broadcast_targets(leader_id_), msg,
                 std::make_shared<const BitString>(l.witness));
    }

    void run_beacons() {
        if (tick_ % cfg_.beacon_interval_ticks != 0) return;
        // Plumbing, not protocol traffic: neighbors learn current levels.
        for (std::uint16_t id : sensors()) {
            charge(id, EnergyAction::send);
            for (std::uint16_t nb : mesh_neighbors(id)) {
                node(nb).neighbor_energy[id] = node(id).energy.level;
                charge(nb, EnergyAction::receive);
            }
        }
    }

    void run_data_traffic() {
        if (tick_ == 0 || tick_ % cfg_.data_interval_ticks != 0) return;
        for (std::uint16_t id : sensors()) {
            if (id == leader_id_) continue;
            SimNode& n = node(id);
            if (n.st.keys.k_msi_own) {
                send_data(id, leader_id_, *n.st.keys.k_msi_own, 1);
            }
            if (n.st.keys.ks) {
                const std::uint16_t peer = next_slave_after(id);
                if (peer != 0) send_data(id, peer, *n.st.keys.ks, 2);
            }
        }
        SimNode& l = node(leader_id_);
        if (l.st.keys.k_mn) send_data(leader_id_, kServerId, l.st.keys.kn, 3);
    }

    std::uint16_t next_slave_after(std::uint16_t id) const {
        const std::uint16_t n = sensor_count();
        for (std::uint16_t step = 1; step < n; ++step) {
            const std::uint16_t cand = static_cast<std::uint16_t>((id - 1 + step) % n + 1);
            if (cand != leader_id_ && cand != id) return cand;
        }
        return 0;
    }

    void send_data(std::uint16_t from, std::uint16_t to, const BitString& link_key,
                   std::uint16_t link_class) {
        std::vector<std::uint8_t> payload;
        ProtocolMessage::push_u16(payload, from);
        ProtocolMessage::push_u64(payload, tick_);
        ProtocolMessage::push_u16(payload, link_class);
        ProtocolMessage msg = seal_data(link_key, NodeId{from}, payload, Timestamp{tick_});
        charge(from, EnergyAction::mac_op);
        transmit(from, {to}, msg);
    }

    // --- elections ----------------------------------------------------------

    void on_threshold_crossed(std::uint16_t id) {
        record("election", id, id, "threshold_crossed", "");
        if (id != leader_id_) return;
        election_pending_ = true;
    }

    void check_election_progress() {
        // Fire a pending call once the group is keyed.
        if (election_pending_ && !round_open_) {
            SimNode& l = node(leader_id_);
            if (l.st.keys.ks) {
                election_pending_ = false;
                round_open_ = true;
                round_ = ElectionRound{};
                round_.round_id = static_cast<std::uint32_t>(++metrics_.election_calls);
                round_.call_ts = Timestamp{tick_};
                round_.open = true;
                ProtocolMessage msg = build_election_call(l.st, round_.round_id, Timestamp{tick_});
                charge(leader_id_, EnergyAction::mac_op);
                record("election", leader_id_, kBroadcast.value,
                       "call:" + std::to_string(round_.round_id), "");
                transmit(leader_id_, broadcast_targets(leader_id_), msg);
            }
        }
        if (!round_open_) return;

        const std::uint64_t expected = sensor_count() - 1u;
        const bool timed_out = tick_ >= round_.call_ts.ticks + cfg_.vote_timeout_ticks;
        if (round_.votes.size() < expected && !timed_out) return;

        round_open_ = false;
        SimNode& l = node(leader_id_);
        const std::optional<NodeId> winner = tally_and_assign(round_, l.neighbor_energy);
        if (!winner) {
            metrics_.election_no_votes += 1;
            record("election", leader_id_, leader_id_, "no_votes", "");
            return;
        }
        ProtocolMessage msg = build_assign(l.st, *winner, Timestamp{tick_});
        charge(leader_id_, EnergyAction::mac_op);
        record("election", leader_id_, winner->value, "assign", "");
        transmit(leader_id_, broadcast_targets(leader_id_), msg);
    }

    /// Atomic role transfer, then the stored-commitment forwarding and a
    /// fresh establishment round by the new leader.
    void perform_handover(std::uint16_t new_leader) {
        const std::uint16_t old_leader = leader_id_;
        if (new_leader == old_leader) return;
        node(old_leader).st.is_leader = false;
        node(new_leader).st.is_leader = true;
        leader_id_ = new_leader;
        leader_has_distributed_ = false;
        metrics_.election_count += 1;

        // Old leader forwards each stored commitment, one per tick so the
        // per-(sender,kind) freshness rule is satisfied.
        SimNode& old_node = node(old_leader);
        std::uint64_t offset = 0;
        for (const auto& [slave_id, commitment] : old_node.st.stored_replies) {
            if (slave_id == new_leader) continue; // the new leader re-derives its own keys
            pending_handover_sends_.push_back(
                {tick_ + offset, old_leader, slave_id, commitment});
            ++offset;
        }
        handover_distribute_due_ = tick_ + offset + 1;
        handover_distribute_by_ = new_leader;
    }

    void run_handover_queue() {
        // Sends scheduled by perform_handover, staggered one per tick.
        std::vector<PendingForward> still;
        for (PendingForward& f : pending_handover_sends_) {
            if (f.at_tick > tick_) {
                still.push_back(f);
                continue;
            }
            SimNode& from = node(f.from);
            if (!from.st.keys.ks) continue;
            ProtocolMessage msg = build_handover_forward(from.st, NodeId{f.slave_id}, f.commitment,
                                                         Timestamp{tick_});
            metrics_.handover_forwards += 1;
            charge(f.from, EnergyAction::mac_op);
            transmit(f.from, {leader_id_}, msg);
        }
        pending_handover_sends_ = std::move(still);

        if (handover_distribute_due_ == tick_ && handover_distribute_by_ == leader_id_) {
            handover_distribute_due_ = ~0ULL;
            start_establishment();
        }
    }

    // --- delivery & dispatch -------------------------------------------------

    void deliver_due() {
        auto it = pending_.find(tick_);
        if (it == pending_.end()) return;
        std::vector<Delivery> batch = std::move(it->second);
        pending_.erase(it);
        for (Delivery& d : batch) deliver(d);
    }

    void deliver(Delivery& d) {
        if (d.via == Via::normal && cfg_.drop_rate > 0.0 && rng_channel_->bernoulli(cfg_.drop_rate)) {
            metrics_.msgs_dropped += 1;
            record("drop", d.from, d.to, "", digest_of(d.bytes));
            return;
        }
        if (d.via == Via::normal && cfg_.adversary.mode == AdversaryMode::tamper &&
            rng_adv_->bernoulli(cfg_.adversary.rate)) {
            const std::size_t bit = static_cast<std::size_t>(rng_adv_->below(d.bytes.size() * 8));
            d.bytes[bit / 8] ^= static_cast<std::uint8_t>(1u << (7 - bit % 8));
            d.via = Via::tamper;
            metrics_.tamper_attempts += 1;
        }

        const std::string digest = digest_of(d.bytes);
        metrics_.msgs_delivered += 1;
        record("deliver", d.from, d.to, "", digest);
        charge(d.to, EnergyAction::receive);
        delivered_log_.push_back({d.to, digest, d.via});

        if (cfg_.adversary.mode == AdversaryMode::eavesdrop) {
            transcript_.insert(transcript_.end(), d.bytes.begin(), d.bytes.end());
        }

        const std::optional<ProtocolMessage> parsed = ProtocolMessage::parse(d.bytes);
        ProcessResult result;
        if (!parsed) {
            result = ProcessResult::reject(RejectReason::malformed);
        } else {
            result = dispatch(d, *parsed);
        }
        account_result(d, digest, result);
        if (result.accepted && parsed)
            accepted_log_.push_back({d.to, parsed->sender, parsed->kind, parsed->ts});

        if (cfg_.adversary.mode == AdversaryMode::foreign_body && parsed &&
            (parsed->kind == MsgKind::KeyDistribute || parsed->kind == MsgKind::RsiReply ||
             parsed->kind == MsgKind::HandoverForward)) {
            foreign_decommit_attempt(*parsed);
        }
        if (cfg_.adversary.mode == AdversaryMode::replay && d.via == Via::normal && result.accepted) {
            replay_pool_.push_back({d.to, d.bytes});
        }
    }

    void account_result(const Delivery& d, const std::string& digest, ProcessResult result) {
        if (result.accepted) {
            metrics_.accepts_total += 1;
            record("accept", d.from, d.to, "", digest);
        } else {
            metrics_.rejects_by_reason[to_string(result.reason)] += 1;
            record("reject", d.from, d.to, to_string(result.reason), digest);
        }
        if (d.via != Via::normal) {
            metrics_.adversary_attempts += 1;
            if (d.via == Via::replay) metrics_.replay_attempts += 1;
            if (d.via == Via::inject) metrics_.inject_attempts += 1;
            if (result.accepted) {
                metrics_.adversary_silent_accepts += 1;
            } else {
                metrics_.adversary_rejects_by_reason[to_string(result.reason)] += 1;
                if (d.via == Via::replay && result.reason == RejectReason::stale_ts)
                    metrics_.replay_stale_rejects += 1;
            }
        }
    }

    ProcessResult dispatch(const Delivery& d, const ProtocolMessage& msg) {
        if (d.to == kServerId) return server_dispatch(msg);
        if (!is_sensor(d.to)) return ProcessResult::reject(RejectReason::unexpected);
        SimNode& n = node(d.to);
        switch (msg.kind) {
            case MsgKind::KeyDistribute: return on_key_distribute(n, d, msg);
            case MsgKind::RsiReply: return on_rsi_reply(n, d, msg);
            case MsgKind::HandoverForward: return on_handover_forward(n, msg);
            case MsgKind::ElectionCall: return on_election_call(n, msg);
            case MsgKind::Vote: return on_vote(n, msg);
            case MsgKind::Assign: return on_assign(n, msg);
            case MsgKind::Data: return on_data(n, msg);
        }
        return ProcessResult::reject(RejectReason::malformed);
    }

    ProcessResult server_dispatch(const ProtocolMessage& msg) {
        if (msg.kind != MsgKind::Data) return ProcessResult::reject(RejectReason::unexpected);
        return open_data(kn_, server_, msg).result;
    }

    ProcessResult on_key_distribute(SimNode& n, const Delivery& d, const ProtocolMessage& msg) {
        if (d.via == Via::normal) metrics_.establishment_attempts += 1;
        KeyDistributeOutcome out =
            process_key_distribute(n.st, n.witness, cfg_.code, msg, *rng_protocol_);
        if (out.result.reason != RejectReason::stale_ts &&
            out.result.reason != RejectReason::malformed &&
            out.result.reason != RejectReason::not_keyed)
            charge(n.st.id.value, EnergyAction::decommit_op);
        if (out.result.accepted || out.result.reason == RejectReason::bad_mac)
            charge(n.st.id.value, EnergyAction::mac_op);

        if (d.commit_witness && d.via == Via::normal &&
            d.commit_witness->size() == n.witness.size()) {
            metrics_.witness_pairs_checked += 1;
            const bool sim = similar(*d.commit_witness, n.witness, cfg_.t);
            const bool ok = out.result.accepted;
            if (sim) metrics_.similar_pairs += 1;
            if (sim && !ok) metrics_.similar_but_decommit_failed += 1;
            if (!sim && ok) metrics_.dissimilar_but_decommit_ok += 1;
        }

        if (out.result.accepted) {
            if (d.via == Via::normal) metrics_.establishment_accepts += 1;
            snapshot_secrets(n.st.keys);
            // Reply on every acceptance: a retransmitted KeyDistribute doubles
            // as the leader's re-request for lost r_si replies.
            if (n.last_rsi_tick != tick_) send_rsi_reply(n.st.id.value);
        }
        return out.result;
    }

    ProcessResult on_rsi_reply(SimNode& n, const Delivery& d, const ProtocolMessage& msg) {
        RsiReplyOutcome out = process_rsi_reply(n.st, n.witness, cfg_.code, msg);
        if (out.result.accepted || out.result.reason == RejectReason::bad_mac ||
            out.result.reason == RejectReason::decommit_failed ||
            out.result.reason == RejectReason::malformed)
            charge(n.st.id.value, EnergyAction::mac_op);
        if (out.result.accepted || out.result.reason == RejectReason::decommit_failed)
            charge(n.st.id.value, EnergyAction::decommit_op);
        if (d.commit_witness && d.via == Via::normal &&
            d.commit_witness->size() == n.witness.size()) {
            metrics_.witness_pairs_checked += 1;
            const bool sim = similar(*d.commit_witness, n.witness, cfg_.t);
            if (sim) metrics_.similar_pairs += 1;
            if (sim && !out.result.accepted) metrics_.similar_but_decommit_failed += 1;
            if (!sim && out.result.accepted) metrics_.dissimilar_but_decommit_ok += 1;
        }
        if (out.result.accepted) snapshot_secrets(n.st.keys);
        return out.result;
    }

    ProcessResult on_handover_forward(SimNode& n, const ProtocolMessage& msg) {
        HandoverForwardOutcome out = process_handover_forward(n.st, n.witness, cfg_.code, msg);
        if (out.result.accepted || out.result.reason == RejectReason::bad_mac ||
            out.result.reason == RejectReason::decommit_failed ||
            out.result.reason == RejectReason::malformed)
            charge(n.st.id.value, EnergyAction::mac_op);
        if (out.result.accepted || out.result.reason == RejectReason::decommit_failed)
            charge(n.st.id.value, EnergyAction::decommit_op);
        if (out.result.accepted)
            metrics_.handover_decommit_ok += 1;
        else if (out.result.reason == RejectReason::decommit_failed)
            metrics_.handover_decommit_failed += 1;
        return out.result;
    }

    ProcessResult on_election_call(SimNode& n, const ProtocolMessage& msg) {
        ProcessResult r = process_group_message(n.st, msg);
        charge_group(n, r);
        if (!r.accepted || n.st.is_leader) return r;
        // Vote for the highest-energy neighbor, excluding the caller and self.
        std::map<std::uint16_t, double> view = n.neighbor_energy;
        view.erase(msg.sender.value);
        view.erase(n.st.id.value);
        if (view.empty()) return r;
        const NodeId candidate = cast_vote(view);
        if (!n.st.keys.ks) return r;
        ProtocolMessage vote = build_vote(n.st, candidate, Timestamp{tick_});
        charge(n.st.id.value, EnergyAction::mac_op);
        transmit(n.st.id.value, {msg.sender.value}, vote);
        return r;
    }

    ProcessResult on_vote(SimNode& n, const ProtocolMessage& msg) {
        ProcessResult r = process_group_message(n.st, msg);
        charge_group(n, r);
        if (!r.accepted) return r;
        if (!n.st.is_leader || !round_open_)
            return ProcessResult::reject(RejectReason::closed_round);
        if (msg.body.size() != 2) return ProcessResult::reject(RejectReason::malformed);
        round_.record_vote(msg.sender, NodeId{ProtocolMessage::read_u16(msg.body.data())});
        return r;
    }

    ProcessResult on_assign(SimNode& n, const ProtocolMessage& msg) {
        ProcessResult r = process_group_message(n.st, msg);
        charge_group(n, r);
        if (!r.accepted) return r;
        if (msg.body.size() != 2) return ProcessResult::reject(RejectReason::malformed);
        const std::uint16_t assignee = ProtocolMessage::read_u16(msg.body.data());
        if (assignee == n.st.id.value && !n.st.is_leader) perform_handover(assignee);
        return r;
    }

    ProcessResult on_data(SimNode& n, const ProtocolMessage& msg) {
        const BitString* link_key = nullptr;
        if (n.st.is_leader) {
            auto it = n.st.keys.k_msi_peers.find(msg.sender.value);
            if (it != n.st.keys.k_msi_peers.end()) link_key = &it->second;
        } else if (msg.sender.value == leader_id_ && n.st.keys.k_msi_own) {
            link_key = &*n.st.keys.k_msi_own;
        } else if (n.st.keys.ks) {
            link_key = &*n.st.keys.ks;
        }
        if (!link_key) return ProcessResult::reject(RejectReason::not_keyed);
        OpenResult out = open_data(*link_key, n.st, msg);
        if (out.result.accepted || out.result.reason == RejectReason::bad_mac)
            charge(n.st.id.value, EnergyAction::mac_op);
        return out.result;
    }

    void charge_group(SimNode& n, const ProcessResult& r) {
        if (r.accepted || r.reason == RejectReason::bad_mac)
            charge(n.st.id.value, EnergyAction::mac_op);
    }

    // --- adversary ------------------------------------------------------------

    void adversary_tick() {
        switch (cfg_.adversary.mode) {
            case AdversaryMode::replay: {
                if (!replay_pool_.empty() && rng_adv_->bernoulli(cfg_.adversary.rate)) {
                    const auto& [to, bytes] =
                        replay_pool_[static_cast<std::size_t>(rng_adv_->below(replay_pool_.size()))];
                    schedule(0xfffe, to, bytes, Via::replay);
                }
                break;
            }
            case AdversaryMode::inject: {
                if (rng_adv_->bernoulli(cfg_.adversary.rate)) inject_message();
                break;
            }
            default: break;
        }
    }

    void inject_message() {
        ProtocolMessage msg;
        msg.kind = static_cast<MsgKind>(1 + rng_adv_->below(7));
        msg.sender = NodeId{static_cast<std::uint16_t>(1 + rng_adv_->below(sensor_count()))};
        msg.ts = Timestamp{tick_ + 1};
        std::size_t body_len = 0;
        switch (msg.kind) {
            case MsgKind::KeyDistribute:
            case MsgKind::RsiReply:
            case MsgKind::HandoverForward: body_len = 32 + (cfg_.code.codeword_len + 7) / 8; break;
            case MsgKind::ElectionCall: body_len = 4; break;
            case MsgKind::Vote:
            case MsgKind::Assign: body_len = 2; break;
            case MsgKind::Data: body_len = 12; break;
        }
        msg.body.resize(body_len);
        for (auto& b : msg.body) b = static_cast<std::uint8_t>(rng_adv_->below(256));
        const BitString random_key = BitString::random(kKeyBits, *rng_adv_);
        msg.mac = mac128(random_key, msg.mac_input());
        const std::uint16_t to = static_cast<std::uint16_t>(1 + rng_adv_->below(sensor_count()));
        schedule(msg.sender.value, to, msg.serialize(), Via::inject);
    }

    void foreign_decommit_attempt(const ProtocolMessage& msg) {
        Commitment c;
        try {
            c = parse_commitment(msg.body, cfg_.code);
        } catch (const std::invalid_argument&) {
            return;
        }
        metrics_.foreign_decommit_attempts += 1;
        const BitString k_commit = foreign_witness_ ^ expand(cfg_.code, r_u_);
        if (decommit(c, k_commit)) metrics_.foreign_decommit_successes += 1;
    }

    // --- end of tick ------------------------------------------------------------

    void end_of_tick() {
        for (std::uint16_t id : sensors()) charge(id, EnergyAction::idle_tick);
        for (SimNode& n : nodes_) n.timeline.push_back(n.energy.level);
        int leaders = 0;
        for (const SimNode& n : nodes_) leaders += n.st.is_leader ? 1 : 0;
        if (leaders != 1) metrics_.single_leader_ok = false;
    }

    // --- finalization -------------------------------------------------------------

    void finalize_metrics() {
        const SimNode& l = node_const(leader_id_);
        metrics_.key_epoch_min = ~0ULL;
        metrics_.key_epoch_max = 0;
        for (const SimNode& n : nodes_) {
            metrics_.key_epoch_min = std::min(metrics_.key_epoch_min, n.st.keys.key_epoch);
            metrics_.key_epoch_max = std::max(metrics_.key_epoch_max, n.st.keys.key_epoch);
        }

        metrics_.nodes_in_agreement = 0;
        for (const SimNode& n : nodes_) {
            if (n.st.id.value == leader_id_) continue;
            if (!n.st.keys.k_mn) continue;
            const bool ks_ok = n.st.keys.ks && l.st.keys.ks && *n.st.keys.ks == *l.st.keys.ks;
            auto it = l.st.keys.k_msi_peers.find(n.st.id.value);
            const bool msi_ok = n.st.keys.k_msi_own && it != l.st.keys.k_msi_peers.end() &&
                                *n.st.keys.k_msi_own == it->second;
            const bool consistent = n.st.keys.consistent();
            if (ks_ok && msi_ok && consistent)
                metrics_.nodes_in_agreement += 1;
            else
                metrics_.key_agreement_ok = false;
        }

        for (const SimNode& n : nodes_) {
            NodeEnergyReport rep;
            rep.initial = n.initial_energy;
            rep.final_level = n.energy.level;
            for (int i = 0; i < kEnergyActionCount; ++i)
                rep.action_counts[i] = n.energy.action_counts[i];
            rep.timeline = n.timeline;
            metrics_.energy[n.st.id.value] = std::move(rep);

            const double expected = std::max(0.0, n.initial_energy - n.energy.spent_by_counts());
            if (std::abs(expected - n.energy.level) > 1e-9) metrics_.conservation_ok = false;
        }

        // Delivery sanity: every normal delivery matches a prior send, and no
        // (recipient, digest) pair repeats without the replay adversary.
        std::set<std::pair<std::uint16_t, std::string>> seen;
        for (const DeliveredRecord& r : delivered_log_) {
            if (r.via == Via::inject || r.via == Via::tamper) continue;
            if (!sent_digests_.count(r.digest)) {
                metrics_.delivery_sanity_ok = false;
                continue;
            }
            const auto key = std::make_pair(r.to, r.digest);
            if (seen.count(key)) {
                if (r.via != Via::replay) metrics_.delivery_sanity_ok = false;
            } else {
                seen.insert(key);
            }
        }

        if (cfg_.adversary.mode == AdversaryMode::eavesdrop) {
            metrics_.confidentiality_checked = true;
            for (const auto& secret : secrets_) {
                if (secret.empty()) continue;
                auto it = std::search(transcript_.begin(), transcript_.end(), secret.begin(),
                                      secret.end());
                if (it != transcript_.end()) metrics_.confidentiality_ok = false;
            }
        }

        // Replay closure: freshness runs first in every process path, so an
        // accepted (sender, kind, ts) must read as stale against its
        // recipient's final tracker. This covers re-delivery of any earlier
        // accepted message at any later point of the trace.
        for (const AcceptedRecord& r : accepted_log_) {
            const FreshnessTracker& tracker =
                r.to == kServerId ? server_.fresh : node_const(r.to).st.fresh;
            if (tracker.fresh(r.sender, r.kind, r.ts)) metrics_.replay_closure_ok = false;
        }

        probe_old_keys();
    }

    /// Instrumentation on clones: fresh-timestamp traffic keyed under any
    /// superseded group key must be rejected by every node.
    void probe_old_keys() {
        if (group_key_history_.size() < 2) return;
        const std::uint8_t probe_payload[4] = {0xde, 0xad, 0xbe, 0xef};
        for (std::size_t k = 0; k + 1 < group_key_history_.size(); ++k) {
            const BitString& old_ks = group_key_history_[k];
            for (const SimNode& n : nodes_) {
                NodeState clone = n.st;
                ProtocolMessage sealed =
                    seal_data(old_ks, NodeId{0xfffd}, probe_payload, Timestamp{tick_ + 1});
                metrics_.old_key_probes += 1;
                if (!clone.keys.ks) {
                    metrics_.old_key_rejects += 1; // nothing to accept with
                    continue;
                }
                const OpenResult r = open_data(*clone.keys.ks, clone, sealed);
                NodeState clone2 = n.st;
                ProtocolMessage group;
                group.kind = MsgKind::ElectionCall;
                group.sender = NodeId{0xfffd};
                group.ts = Timestamp{tick_ + 1};
                ProtocolMessage::push_u32(group.body, 0);
                group.mac = mac128(old_ks, group.mac_input());
                const ProcessResult r2 = process_group_message(clone2, group);
                if (!r.result.accepted && !r2.accepted) metrics_.old_key_rejects += 1;
            }
        }
    }

    // --- members -------------------------------------------------------------

    struct PendingForward {
        std::uint64_t at_tick;
        std::uint16_t from;
        std::uint16_t slave_id;
        Commitment commitment;
    };

    struct DeliveredRecord {
        std::uint16_t to;
        std::string digest;
        Via via;
    };

    struct AcceptedRecord {
        std::uint16_t to;
        NodeId sender;
        MsgKind kind;
        Timestamp ts;
    };

    SimConfig cfg_;
    BodySignalModel body_;
    BodySignalModel foreign_body_;
    BitString kn_;
    BitString r_u_;

    std::vector<SimNode> nodes_;
    NodeState server_;
    std::uint16_t leader_id_ = 1;

    std::unique_ptr<SplitMix64> rng_protocol_;
    std::unique_ptr<SplitMix64> rng_channel_;
    std::unique_ptr<SplitMix64> rng_adv_;

    std::uint64_t tick_ = 0;
    std::uint64_t next_seq_ = 0;
    std::uint64_t next_order_ = 0;
    bool ran_ = false;

    std::map<std::uint64_t, std::vector<Delivery>> pending_;
    std::vector<TraceEvent> trace_;
    Metrics metrics_;

    bool election_pending_ = false;
    bool leader_has_distributed_ = false;
    bool round_open_ = false;
    ElectionRound round_;
    std::vector<PendingForward> pending_handover_sends_;
    std::uint64_t handover_distribute_due_ = ~0ULL;
    std::uint16_t handover_distribute_by_ = 0;

    std::vector<std::pair<std::uint16_t, std::vector<std::uint8_t>>> replay_pool_;
    std::vector<std::uint8_t> transcript_;
    std::set<std::vector<std::uint8_t>> secrets_;
    std::set<std::string> sent_digests_;
    std::vector<DeliveredRecord> delivered_log_;
    std::vector<AcceptedRecord> accepted_log_;
    std::vector<BitString> group_key_history_;
    BitString foreign_witness_;
    std::uint64_t foreign_witness_epoch_ = ~0ULL;
};

/// One isolated key-transport attempt between a leader and a slave observing
/// the same body at epoch = trial index, through the real build/process
/// path. The workhorse of success-rate estimation.
inline bool run_establishment_trial(const BodySignalModel& body, const CodeParams& code,
                                    std::uint64_t trial, std::uint16_t leader_id = 1,
                                    std::uint16_t slave_id = 2) {
    SplitMix64 rng(fold(body.seed, 0x747269616cULL, trial)); // "trial"
    const BitString r_u = BitString::random(kKeyBits, rng);

    NodeState leader;
    leader.id = NodeId{leader_id};
    leader.is_leader = true;
    leader.keys.r_u = r_u;
    NodeState slave;
    slave.id = NodeId{slave_id};
    slave.keys.r_u = r_u;

    const BitString x_leader = fused_witness(body, leader_id, trial);
    const BitString x_slave = fused_witness(body, slave_id, trial);
    const ProtocolMessage msg =
        build_key_distribute(leader, x_leader, code, rng, Timestamp{trial + 1});
    const KeyDistributeOutcome out = process_key_distribute(slave, x_slave, code, msg, rng);
    return out.result.accepted;
}

} // namespace bsk
