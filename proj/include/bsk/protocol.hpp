#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "bsk/bitstring.hpp"
#include "bsk/crypto.hpp"
#include "bsk/fuzzycommit.hpp"
#include "bsk/rng.hpp"

namespace bsk {

inline constexpr std::size_t kKeyBits = 128;

struct NodeId {
    std::uint16_t value = 0;
    auto operator<=>(const NodeId&) const = default;
};

/// Broadcast marker used in trace events; never a real node.
inline constexpr NodeId kBroadcast{0xffff};

struct Timestamp {
    std::uint64_t ticks = 0;
    auto operator<=>(const Timestamp&) const = default;
};

enum class MsgKind : std::uint8_t {
    KeyDistribute = 1,
    RsiReply = 2,
    HandoverForward = 3,
    ElectionCall = 4,
    Vote = 5,
    Assign = 6,
    Data = 7,
};

inline bool valid_kind(std::uint8_t k) { return k >= 1 && k <= 7; }

inline const char* to_string(MsgKind k) {
    switch (k) {
        case MsgKind::KeyDistribute: return "KeyDistribute";
        case MsgKind::RsiReply: return "RsiReply";
        case MsgKind::HandoverForward: return "HandoverForward";
        case MsgKind::ElectionCall: return "ElectionCall";
        case MsgKind::Vote: return "Vote";
        case MsgKind::Assign: return "Assign";
        case MsgKind::Data: return "Data";
    }
    return "?";
}

enum class RejectReason {
    none = 0,
    stale_ts,
    decommit_failed,
    bad_mac,
    malformed,
    not_keyed,
    unexpected,
    closed_round,
};

inline const char* to_string(RejectReason r) {
    switch (r) {
        case RejectReason::none: return "none";
        case RejectReason::stale_ts: return "stale_ts";
        case RejectReason::decommit_failed: return "decommit_failed";
        case RejectReason::bad_mac: return "bad_mac";
        case RejectReason::malformed: return "malformed";
        case RejectReason::not_keyed: return "not_keyed";
        case RejectReason::unexpected: return "unexpected";
        case RejectReason::closed_round: return "closed_round";
    }
    return "?";
}

struct ProcessResult {
    bool accepted = false;
    RejectReason reason = RejectReason::none;

    static ProcessResult ok() { return {true, RejectReason::none}; }
    static ProcessResult reject(RejectReason r) { return {false, r}; }
};

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

/// Tagged protocol message. Wire layout (big-endian):
///   kind (1) || sender (2) || extra_id (2) || ts (8) || body_len (4)
///   || body || mac (16)
/// The MAC covers every byte before the mac field, in order.
struct ProtocolMessage {
    MsgKind kind = MsgKind::Data;
    NodeId sender;
    NodeId extra_id;   // HandoverForward carries the slave's id; zero elsewhere
    Timestamp ts;
    std::vector<std::uint8_t> body;
    Tag128 mac{};

    std::vector<std::uint8_t> mac_input() const {
        std::vector<std::uint8_t> out;
        out.reserve(17 + body.size());
        out.push_back(static_cast<std::uint8_t>(kind));
        push_u16(out, sender.value);
        push_u16(out, extra_id.value);
        push_u64(out, ts.ticks);
        push_u32(out, static_cast<std::uint32_t>(body.size()));
        out.insert(out.end(), body.begin(), body.end());
        return out;
    }

    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> out = mac_input();
        out.insert(out.end(), mac.begin(), mac.end());
        return out;
    }

    /// Strict parse; nullopt on framing violations (short buffer, body_len
    /// mismatch, unknown kind byte).
    static std::optional<ProtocolMessage> parse(std::span<const std::uint8_t> bytes) {
        if (bytes.size() < 33) return std::nullopt;
        ProtocolMessage m;
        const std::uint8_t kind_byte = bytes[0];
        if (!valid_kind(kind_byte)) return std::nullopt;
        m.kind = static_cast<MsgKind>(kind_byte);
        m.sender.value = read_u16(bytes.data() + 1);
        m.extra_id.value = read_u16(bytes.data() + 3);
        m.ts.ticks = read_u64(bytes.data() + 5);
        const std::uint32_t body_len = read_u32(bytes.data() + 13);
        if (bytes.size() != 33u + body_len) return std::nullopt;
        m.body.assign(bytes.begin() + 17, bytes.begin() + 17 + body_len);
        std::copy(bytes.end() - 16, bytes.end(), m.mac.begin());
        return m;
    }

    static void push_u16(std::vector<std::uint8_t>& v, std::uint16_t x) {
        v.push_back(static_cast<std::uint8_t>(x >> 8));
        v.push_back(static_cast<std::uint8_t>(x));
    }
    static void push_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
        for (int s = 24; s >= 0; s -= 8) v.push_back(static_cast<std::uint8_t>(x >> s));
    }
    static void push_u64(std::vector<std::uint8_t>& v, std::uint64_t x) {
        for (int s = 56; s >= 0; s -= 8) v.push_back(static_cast<std::uint8_t>(x >> s));
    }
    static std::uint16_t read_u16(const std::uint8_t* p) {
        return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
    }
    static std::uint32_t read_u32(const std::uint8_t* p) {
        return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
               (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
    }
    static std::uint64_t read_u64(const std::uint8_t* p) {
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x = (x << 8) | p[i];
        return x;
    }
};

// ---------------------------------------------------------------------------
// Freshness
// ---------------------------------------------------------------------------

/// Strict monotonic freshness: a timestamp is fresh iff it exceeds the last
/// accepted one. No acceptance window; simulation time has no skew.
inline bool check_freshness(Timestamp last_accepted, Timestamp ts) {
    return ts > last_accepted;
}

/// Per-(sender, kind) last-accepted timestamps. Never reset, not even across
/// re-keying: replayed traffic from any earlier point must stay dead. A slot
/// with no accepted message yet treats any timestamp as fresh.
class FreshnessTracker {
public:
    bool fresh(NodeId sender, MsgKind kind, Timestamp ts) const {
        auto it = last_.find(key(sender, kind));
        if (it == last_.end()) return true;
        return check_freshness(Timestamp{it->second}, ts);
    }

    void accept(NodeId sender, MsgKind kind, Timestamp ts) {
        last_[key(sender, kind)] = ts.ticks;
    }

private:
    static std::uint32_t key(NodeId sender, MsgKind kind) {
        return (static_cast<std::uint32_t>(sender.value) << 8) | static_cast<std::uint32_t>(kind);
    }
    std::map<std::uint32_t, std::uint64_t> last_;
};

// ---------------------------------------------------------------------------
// Key material
// ---------------------------------------------------------------------------

/// k_msi = k_mn XOR r_si.
inline BitString derive_node_key(const BitString& k_mn, const BitString& r_si) {
    return k_mn ^ r_si;
}

/// ks = k_mn XOR r_u.
inline BitString derive_group_key(const BitString& k_mn, const BitString& r_u) {
    return k_mn ^ r_u;
}

/// A node's key material. Re-keying overwrites, never appends.
struct KeyRing {
    BitString kn = BitString::zeros(kKeyBits);    // pre-deployed network key
    BitString r_u = BitString::zeros(kKeyBits);   // body-wide secret
    std::optional<BitString> r_si;                // own per-key-epoch nonce (slave side)
    std::optional<BitString> k_mn;                // leader key, after establishment
    std::optional<BitString> k_msi_own;           // slave side pairwise key
    std::map<std::uint16_t, BitString> k_msi_peers; // leader side, per slave
    std::optional<BitString> ks;                  // group key
    std::uint64_t key_epoch = 0;

    bool operator==(const KeyRing&) const = default;

    /// ks and own k_msi must be recomputable from stored parts.
    bool consistent() const {
        if (k_mn && ks && *ks != derive_group_key(*k_mn, r_u)) return false;
        if (k_mn && r_si && k_msi_own && *k_msi_own != derive_node_key(*k_mn, *r_si)) return false;
        return true;
    }
};

/// Protocol-facing state of one node. Biometric witnesses are owned by the
/// caller (the simulator) and passed per operation.
struct NodeState {
    NodeId id;
    bool is_leader = false;
    KeyRing keys;
    FreshnessTracker fresh;
    std::map<std::uint16_t, Commitment> stored_replies; // leader side, current key epoch
};

// ---------------------------------------------------------------------------
// Key distribution (leader -> slaves)
// ---------------------------------------------------------------------------

/// Leader draws a fresh uniform k_mn and transports it under the fuzzy
/// commitment locked by k_commit = witness XOR expand(r_u). MAC keyed by
/// k_mn itself; slaves can verify it only after a successful decommit.
/// Starts a new key epoch on the leader.
inline ProtocolMessage build_key_distribute(NodeState& leader, const BitString& witness,
                                            const CodeParams& code, SplitMix64& rng,
                                            Timestamp ts) {
    if (witness.size() != code.codeword_len)
        throw std::logic_error("build_key_distribute: missing or mis-sized biometric key for the epoch");
    const BitString k_mn = BitString::random(kKeyBits, rng);
    const BitString k_commit = witness ^ expand(code, leader.keys.r_u);

    ProtocolMessage msg;
    msg.kind = MsgKind::KeyDistribute;
    msg.sender = leader.id;
    msg.ts = ts;
    msg.body = commitment_bytes(commit(code, k_mn, k_commit));
    msg.mac = mac128(k_mn, msg.mac_input());

    leader.keys.k_mn = k_mn;
    leader.keys.ks = derive_group_key(k_mn, leader.keys.r_u);
    leader.keys.r_si.reset();
    leader.keys.k_msi_own.reset();
    leader.keys.k_msi_peers.clear();
    leader.keys.key_epoch += 1;
    leader.stored_replies.clear();
    return msg;
}

/// Retransmission of the current k_mn, re-committed under the current-epoch
/// witness. No key material changes.
inline ProtocolMessage rebuild_key_distribute(NodeState& leader, const BitString& witness,
                                              const CodeParams& code, Timestamp ts) {
    if (!leader.keys.k_mn) throw std::logic_error("rebuild_key_distribute: not keyed");
    if (witness.size() != code.codeword_len)
        throw std::logic_error("rebuild_key_distribute: missing or mis-sized biometric key");
    const BitString k_commit = witness ^ expand(code, leader.keys.r_u);
    ProtocolMessage msg;
    msg.kind = MsgKind::KeyDistribute;
    msg.sender = leader.id;
    msg.ts = ts;
    msg.body = commitment_bytes(commit(code, *leader.keys.k_mn, k_commit));
    msg.mac = mac128(*leader.keys.k_mn, msg.mac_input());
    return msg;
}

struct KeyDistributeOutcome {
    ProcessResult result;
    std::optional<BitString> k_mn;   // recovered key on acceptance
    bool new_key_epoch = false;      // false when a retransmission re-delivered the same k_mn
};

/// Slave side of key distribution. Check order is fixed: freshness, then
/// decommit with k'_commit = witness XOR expand(r_u), then MAC under the
/// recovered key. Any reject leaves the KeyRing byte-identical.
inline KeyDistributeOutcome process_key_distribute(NodeState& slave, const BitString& witness,
                                                   const CodeParams& code,
                                                   const ProtocolMessage& msg,
                                                   SplitMix64& rng) {
    if (!slave.fresh.fresh(msg.sender, msg.kind, msg.ts))
        return {ProcessResult::reject(RejectReason::stale_ts), std::nullopt, false};
    if (witness.size() != code.codeword_len)
        return {ProcessResult::reject(RejectReason::not_keyed), std::nullopt, false};

    Commitment c;
    try {
        c = parse_commitment(msg.body, code);
    } catch (const std::invalid_argument&) {
        return {ProcessResult::reject(RejectReason::malformed), std::nullopt, false};
    }

    const BitString k_commit = witness ^ expand(code, slave.keys.r_u);
    const std::optional<BitString> recovered = decommit(c, k_commit);
    if (!recovered)
        return {ProcessResult::reject(RejectReason::decommit_failed), std::nullopt, false};

    if (mac128(*recovered, msg.mac_input()) != msg.mac)
        return {ProcessResult::reject(RejectReason::bad_mac), std::nullopt, false};

    slave.fresh.accept(msg.sender, msg.kind, msg.ts);
    const bool fresh_key = !slave.keys.k_mn || *slave.keys.k_mn != *recovered;
    if (fresh_key) {
        slave.keys.k_mn = *recovered;
        slave.keys.r_si = BitString::random(kKeyBits, rng);
        slave.keys.k_msi_own = derive_node_key(*recovered, *slave.keys.r_si);
        slave.keys.ks = derive_group_key(*recovered, slave.keys.r_u);
        slave.keys.k_msi_peers.clear();
        slave.keys.key_epoch += 1;
        slave.stored_replies.clear();
    }
    return {ProcessResult::ok(), recovered, fresh_key};
}

// ---------------------------------------------------------------------------
// r_si replies (slave -> leader)
// ---------------------------------------------------------------------------

/// Slave sends its r_si under the same fuzzy-commitment construction, keyed
/// with the current-epoch witness. MAC keyed by the shared k_mn.
inline ProtocolMessage build_rsi_reply(NodeState& slave, const BitString& witness,
                                       const CodeParams& code, Timestamp ts) {
    if (!slave.keys.k_mn || !slave.keys.r_si)
        throw std::logic_error("build_rsi_reply: not yet keyed this key epoch");
    if (witness.size() != code.codeword_len)
        throw std::logic_error("build_rsi_reply: missing or mis-sized biometric key");
    const BitString k_commit = witness ^ expand(code, slave.keys.r_u);
    ProtocolMessage msg;
    msg.kind = MsgKind::RsiReply;
    msg.sender = slave.id;
    msg.ts = ts;
    msg.body = commitment_bytes(commit(code, *slave.keys.r_si, k_commit));
    msg.mac = mac128(*slave.keys.k_mn, msg.mac_input());
    return msg;
}

struct RsiReplyOutcome {
    ProcessResult result;
    std::optional<BitString> k_msi;  // registered pairwise key on acceptance
};

/// Leader side: freshness, MAC under k_mn, then decommit with its own
/// witness. The received commitment is retained verbatim for handover.
inline RsiReplyOutcome process_rsi_reply(NodeState& leader, const BitString& witness,
                                         const CodeParams& code, const ProtocolMessage& msg) {
    if (!leader.fresh.fresh(msg.sender, msg.kind, msg.ts))
        return {ProcessResult::reject(RejectReason::stale_ts), std::nullopt};
    if (!leader.keys.k_mn)
        return {ProcessResult::reject(RejectReason::not_keyed), std::nullopt};
    if (mac128(*leader.keys.k_mn, msg.mac_input()) != msg.mac)
        return {ProcessResult::reject(RejectReason::bad_mac), std::nullopt};

    Commitment c;
    try {
        c = parse_commitment(msg.body, code);
    } catch (const std::invalid_argument&) {
        return {ProcessResult::reject(RejectReason::malformed), std::nullopt};
    }
    const BitString k_commit = witness ^ expand(code, leader.keys.r_u);
    const std::optional<BitString> r_si = decommit(c, k_commit);
    if (!r_si)
        return {ProcessResult::reject(RejectReason::decommit_failed), std::nullopt};

    leader.fresh.accept(msg.sender, msg.kind, msg.ts);
    const BitString k_msi = derive_node_key(*leader.keys.k_mn, *r_si);
    leader.keys.k_msi_peers[msg.sender.value] = k_msi;
    leader.stored_replies[msg.sender.value] = c;
    return {ProcessResult::ok(), k_msi};
}

// ---------------------------------------------------------------------------
// Handover forwarding (old leader -> new leader)
// ---------------------------------------------------------------------------

/// Old leader forwards one stored RsiReply commitment. extra_id carries the
/// slave's id; MAC keyed by the group key both leaders share at that instant.
inline ProtocolMessage build_handover_forward(NodeState& old_leader, NodeId slave_id,
                                              const Commitment& stored, Timestamp ts) {
    if (!old_leader.keys.ks) throw std::logic_error("build_handover_forward: no group key");
    ProtocolMessage msg;
    msg.kind = MsgKind::HandoverForward;
    msg.sender = old_leader.id;
    msg.extra_id = slave_id;
    msg.ts = ts;
    msg.body = commitment_bytes(stored);
    msg.mac = mac128(*old_leader.keys.ks, msg.mac_input());
    return msg;
}

struct HandoverForwardOutcome {
    ProcessResult result;
    NodeId slave_id;
    std::optional<BitString> r_si;   // recovered with the new leader's own witness
};

inline HandoverForwardOutcome process_handover_forward(NodeState& new_leader,
                                                       const BitString& witness,
                                                       const CodeParams& code,
                                                       const ProtocolMessage& msg) {
    if (!new_leader.fresh.fresh(msg.sender, msg.kind, msg.ts))
        return {ProcessResult::reject(RejectReason::stale_ts), msg.extra_id, std::nullopt};
    if (!new_leader.keys.ks)
        return {ProcessResult::reject(RejectReason::not_keyed), msg.extra_id, std::nullopt};
    if (mac128(*new_leader.keys.ks, msg.mac_input()) != msg.mac)
        return {ProcessResult::reject(RejectReason::bad_mac), msg.extra_id, std::nullopt};

    Commitment c;
    try {
        c = parse_commitment(msg.body, code);
    } catch (const std::invalid_argument&) {
        return {ProcessResult::reject(RejectReason::malformed), msg.extra_id, std::nullopt};
    }
    const BitString k_commit = witness ^ expand(code, new_leader.keys.r_u);
    const std::optional<BitString> r_si = decommit(c, k_commit);
    if (!r_si)
        return {ProcessResult::reject(RejectReason::decommit_failed), msg.extra_id, std::nullopt};

    new_leader.fresh.accept(msg.sender, msg.kind, msg.ts);
    return {ProcessResult::ok(), msg.extra_id, r_si};
}

// ---------------------------------------------------------------------------
// Election messages (MAC keyed by the group key)
// ---------------------------------------------------------------------------

inline ProtocolMessage build_group_message(NodeState& node, MsgKind kind, NodeId extra,
                                           std::vector<std::uint8_t> body, Timestamp ts) {
    if (!node.keys.ks) throw std::logic_error("build_group_message: no group key");
    ProtocolMessage msg;
    msg.kind = kind;
    msg.sender = node.id;
    msg.extra_id = extra;
    msg.ts = ts;
    msg.body = std::move(body);
    msg.mac = mac128(*node.keys.ks, msg.mac_input());
    return msg;
}

inline ProtocolMessage build_election_call(NodeState& leader, std::uint32_t round_id,
                                           Timestamp ts) {
    std::vector<std::uint8_t> body;
    ProtocolMessage::push_u32(body, round_id);
    return build_group_message(leader, MsgKind::ElectionCall, NodeId{0}, std::move(body), ts);
}

inline ProtocolMessage build_vote(NodeState& voter, NodeId candidate, Timestamp ts) {
    std::vector<std::uint8_t> body;
    ProtocolMessage::push_u16(body, candidate.value);
    return build_group_message(voter, MsgKind::Vote, NodeId{0}, std::move(body), ts);
}

inline ProtocolMessage build_assign(NodeState& leader, NodeId assignee, Timestamp ts) {
    std::vector<std::uint8_t> body;
    ProtocolMessage::push_u16(body, assignee.value);
    return build_group_message(leader, MsgKind::Assign, NodeId{0}, std::move(body), ts);
}

/// Freshness plus group-key MAC; the shared entry check of all election
/// traffic.
inline ProcessResult process_group_message(NodeState& receiver, const ProtocolMessage& msg) {
    if (!receiver.fresh.fresh(msg.sender, msg.kind, msg.ts))
        return ProcessResult::reject(RejectReason::stale_ts);
    if (!receiver.keys.ks)
        return ProcessResult::reject(RejectReason::not_keyed);
    if (mac128(*receiver.keys.ks, msg.mac_input()) != msg.mac)
        return ProcessResult::reject(RejectReason::bad_mac);
    receiver.fresh.accept(msg.sender, msg.kind, msg.ts);
    return ProcessResult::ok();
}

// ---------------------------------------------------------------------------
// Application data (encrypt-then-MAC under a link key)
// ---------------------------------------------------------------------------

namespace detail {

inline Digest256 derive_labeled(const BitString& link_key, std::uint8_t label) {
    const std::uint8_t l[1] = {label};
    return hmac_sha256(link_key.bytes(), l);
}

inline BitString data_mac_key(const BitString& link_key) {
    const Digest256 d = derive_labeled(link_key, 0x02);
    return BitString::from_bytes(std::span(d).first(16), kKeyBits);
}

/// Keystream block i = HMAC(kenc, ts || i); ts doubles as the nonce since
/// senders never reuse a timestamp for Data.
inline void xor_keystream(const Digest256& kenc, Timestamp ts, std::vector<std::uint8_t>& buf) {
    for (std::size_t block = 0; block * 32 < buf.size(); ++block) {
        std::vector<std::uint8_t> ctr;
        ProtocolMessage::push_u64(ctr, ts.ticks);
        ProtocolMessage::push_u32(ctr, static_cast<std::uint32_t>(block));
        const Digest256 pad = hmac_sha256(kenc, ctr);
        const std::size_t n = std::min<std::size_t>(32, buf.size() - block * 32);
        for (std::size_t i = 0; i < n; ++i) buf[block * 32 + i] ^= pad[i];
    }
}

} // namespace detail

/// Authenticated encryption for one link class (k_msi, ks, or kn).
inline ProtocolMessage seal_data(const BitString& link_key, NodeId sender,
                                 std::span<const std::uint8_t> plaintext, Timestamp ts) {
    const Digest256 kenc = detail::derive_labeled(link_key, 0x01);
    ProtocolMessage msg;
    msg.kind = MsgKind::Data;
    msg.sender = sender;
    msg.ts = ts;
    msg.body.assign(plaintext.begin(), plaintext.end());
    detail::xor_keystream(kenc, ts, msg.body);
    msg.mac = mac128(detail::data_mac_key(link_key), msg.mac_input());
    return msg;
}

struct OpenResult {
    ProcessResult result;
    std::vector<std::uint8_t> plaintext;
};

/// Opens iff key, ciphertext and timestamp are intact and fresh.
inline OpenResult open_data(const BitString& link_key, NodeState& receiver,
                            const ProtocolMessage& msg) {
    if (!receiver.fresh.fresh(msg.sender, msg.kind, msg.ts))
        return {ProcessResult::reject(RejectReason::stale_ts), {}};
    if (mac128(detail::data_mac_key(link_key), msg.mac_input()) != msg.mac)
        return {ProcessResult::reject(RejectReason::bad_mac), {}};
    receiver.fresh.accept(msg.sender, msg.kind, msg.ts);
    std::vector<std::uint8_t> pt = msg.body;
    detail::xor_keystream(detail::derive_labeled(link_key, 0x01), msg.ts, pt);
    return {ProcessResult::ok(), std::move(pt)};
}

} // namespace bsk
