#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "bsk/biokeys.hpp"
#include "bsk/protocol.hpp"

using bsk::BitString;
using bsk::CodeParams;
using bsk::MsgKind;
using bsk::NodeId;
using bsk::NodeState;
using bsk::ProtocolMessage;
using bsk::RejectReason;
using bsk::Timestamp;

namespace {

const CodeParams kCode{"repetition", 384, 128, 3};

struct Fixture {
    BitString r_u;
    bsk::BodySignalModel body;
    bsk::SplitMix64 rng{bsk::fold(0xf00dULL, 0)};

    explicit Fixture(std::uint64_t key_seed = 0xabcdULL) {
        bsk::SplitMix64 g(key_seed);
        r_u = BitString::random(128, g);
        body.seed = 77;
        body.witness_len = 384;
        body.bit_error_prob = 0.0;
        body.readings_per_fuse = 3;
    }

    NodeState make_node(std::uint16_t id, bool leader = false) {
        NodeState n;
        n.id = NodeId{id};
        n.is_leader = leader;
        n.keys.r_u = r_u;
        return n;
    }

    BitString witness(std::uint16_t id, std::uint64_t epoch = 0) {
        return bsk::fused_witness(body, id, epoch);
    }
};

} // namespace

TEST_CASE("mac is deterministic and bit sensitive") {
    bsk::SplitMix64 g(1);
    const BitString key = BitString::random(128, g);
    std::vector<std::uint8_t> data(64);
    for (auto& b : data) b = static_cast<std::uint8_t>(g.below(256));

    const auto tag = bsk::mac128(key, data);
    REQUIRE(tag == bsk::mac128(key, data));

    for (int i = 0; i < 1000; ++i) {
        std::vector<std::uint8_t> mutated = data;
        const std::size_t bit = static_cast<std::size_t>(g.below(mutated.size() * 8));
        mutated[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        REQUIRE(bsk::mac128(key, mutated) != tag);
    }
    for (int i = 0; i < 1000; ++i) {
        const BitString other = BitString::random(128, g);
        if (other == key) continue;
        REQUIRE(bsk::mac128(other, data) != tag);
    }
}

TEST_CASE("freshness is strict monotonic") {
    REQUIRE(bsk::check_freshness(Timestamp{100}, Timestamp{101}));
    REQUIRE_FALSE(bsk::check_freshness(Timestamp{100}, Timestamp{100}));
    REQUIRE_FALSE(bsk::check_freshness(Timestamp{100}, Timestamp{99}));

    bsk::FreshnessTracker tr;
    REQUIRE(tr.fresh(NodeId{1}, MsgKind::Data, Timestamp{1}));
    tr.accept(NodeId{1}, MsgKind::Data, Timestamp{5});
    REQUIRE_FALSE(tr.fresh(NodeId{1}, MsgKind::Data, Timestamp{5}));
    REQUIRE(tr.fresh(NodeId{1}, MsgKind::Data, Timestamp{6}));
    // Per-(sender, kind) isolation.
    REQUIRE(tr.fresh(NodeId{2}, MsgKind::Data, Timestamp{1}));
    REQUIRE(tr.fresh(NodeId{1}, MsgKind::Vote, Timestamp{1}));
}

TEST_CASE("message wire layout is exact") {
    ProtocolMessage m;
    m.kind = MsgKind::Vote;
    m.sender = NodeId{0x0102};
    m.extra_id = NodeId{0x0304};
    m.ts = Timestamp{0x05060708090a0b0cULL};
    m.body = {0xaa, 0xbb};
    m.mac.fill(0xcc);

    const std::vector<std::uint8_t> bytes = m.serialize();
    const std::vector<std::uint8_t> expected_prefix = {
        0x05,                   // kind
        0x01, 0x02,             // sender
        0x03, 0x04,             // extra_id
        0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c, // ts
        0x00, 0x00, 0x00, 0x02, // body_len
        0xaa, 0xbb,             // body
    };
    REQUIRE(bytes.size() == expected_prefix.size() + 16);
    REQUIRE(std::equal(expected_prefix.begin(), expected_prefix.end(), bytes.begin()));
    REQUIRE(std::all_of(bytes.end() - 16, bytes.end(), [](std::uint8_t b) { return b == 0xcc; }));

    const auto parsed = ProtocolMessage::parse(bytes);
    REQUIRE(parsed);
    REQUIRE(parsed->kind == m.kind);
    REQUIRE(parsed->sender == m.sender);
    REQUIRE(parsed->extra_id == m.extra_id);
    REQUIRE(parsed->ts == m.ts);
    REQUIRE(parsed->body == m.body);
    REQUIRE(parsed->mac == m.mac);
}

TEST_CASE("message parse rejects framing violations") {
    ProtocolMessage m;
    m.kind = MsgKind::Data;
    m.sender = NodeId{1};
    m.ts = Timestamp{9};
    m.body = {1, 2, 3};
    std::vector<std::uint8_t> bytes = m.serialize();

    REQUIRE(ProtocolMessage::parse(bytes));
    REQUIRE_FALSE(ProtocolMessage::parse(std::span(bytes).first(10)));

    std::vector<std::uint8_t> bad_len = bytes;
    bad_len[16] ^= 0x01; // body_len low byte
    REQUIRE_FALSE(ProtocolMessage::parse(bad_len));

    std::vector<std::uint8_t> bad_kind = bytes;
    bad_kind[0] = 0x00;
    REQUIRE_FALSE(ProtocolMessage::parse(bad_kind));
    bad_kind[0] = 0x08;
    REQUIRE_FALSE(ProtocolMessage::parse(bad_kind));
}

TEST_CASE("xor key derivations") {
    bsk::SplitMix64 g(2);
    const BitString k = BitString::random(128, g);
    const BitString r = BitString::random(128, g);
    BitString ones = BitString::zeros(128);
    for (std::size_t i = 0; i < 128; ++i) ones.set(i, true);

    REQUIRE(bsk::derive_node_key(BitString::zeros(128), r) == r);
    REQUIRE(bsk::derive_node_key(bsk::derive_node_key(k, r), r) == k);
    REQUIRE(bsk::derive_node_key(ones, ones) == BitString::zeros(128));
    REQUIRE(bsk::derive_group_key(k, BitString::zeros(128)) == k);
    REQUIRE(bsk::derive_group_key(bsk::derive_group_key(k, r), r) == k);
    REQUIRE_THROWS_AS(bsk::derive_node_key(k, BitString::zeros(64)), std::invalid_argument);
}

TEST_CASE("full establishment round with zero noise") {
    Fixture f;
    NodeState leader = f.make_node(1, true);
    std::vector<NodeState> slaves;
    for (std::uint16_t id = 2; id <= 8; ++id) slaves.push_back(f.make_node(id));

    const ProtocolMessage kd =
        bsk::build_key_distribute(leader, f.witness(1), kCode, f.rng, Timestamp{1});
    REQUIRE(leader.keys.k_mn);
    REQUIRE(leader.keys.ks);
    REQUIRE(leader.keys.key_epoch == 1);

    for (NodeState& s : slaves) {
        const auto out = bsk::process_key_distribute(s, f.witness(s.id.value), kCode, kd, f.rng);
        REQUIRE(out.result.accepted);
        REQUIRE(*out.k_mn == *leader.keys.k_mn);
        REQUIRE(*s.keys.ks == *leader.keys.ks);
        REQUIRE(s.keys.key_epoch == 1);
        REQUIRE(s.keys.consistent());
    }

    for (NodeState& s : slaves) {
        const ProtocolMessage reply =
            bsk::build_rsi_reply(s, f.witness(s.id.value), kCode, Timestamp{2});
        const auto out = bsk::process_rsi_reply(leader, f.witness(1), kCode, reply);
        REQUIRE(out.result.accepted);
        REQUIRE(*out.k_msi == *s.keys.k_msi_own);
    }
    REQUIRE(leader.keys.k_msi_peers.size() == 7);
    REQUIRE(leader.stored_replies.size() == 7);

    // Distinct k_mn across establishment rounds.
    const BitString first = *leader.keys.k_mn;
    bsk::build_key_distribute(leader, f.witness(1), kCode, f.rng, Timestamp{3});
    REQUIRE(*leader.keys.k_mn != first);
    REQUIRE(leader.keys.key_epoch == 2);
    REQUIRE(leader.stored_replies.empty());
}

TEST_CASE("key distribute rejects leave state untouched") {
    Fixture f;
    NodeState leader = f.make_node(1, true);
    NodeState slave = f.make_node(2);

    const ProtocolMessage kd =
        bsk::build_key_distribute(leader, f.witness(1), kCode, f.rng, Timestamp{1});

    SECTION("replay rejected after acceptance") {
        REQUIRE(bsk::process_key_distribute(slave, f.witness(2), kCode, kd, f.rng).result.accepted);
        const bsk::KeyRing before = slave.keys;
        const auto again = bsk::process_key_distribute(slave, f.witness(2), kCode, kd, f.rng);
        REQUIRE_FALSE(again.result.accepted);
        REQUIRE(again.result.reason == RejectReason::stale_ts);
        REQUIRE(slave.keys == before);
    }

    SECTION("tampered delta bit never yields a silent wrong key") {
        ProtocolMessage bad = kd;
        bad.body[40] ^= 0x10; // inside delta
        const bsk::KeyRing before = slave.keys;
        const auto out = bsk::process_key_distribute(slave, f.witness(2), kCode, bad, f.rng);
        REQUIRE_FALSE(out.result.accepted);
        REQUIRE((out.result.reason == RejectReason::decommit_failed ||
                 out.result.reason == RejectReason::bad_mac));
        REQUIRE(slave.keys == before);
    }

    SECTION("tampered digest rejected") {
        ProtocolMessage bad = kd;
        bad.body[0] ^= 0x01;
        const auto out = bsk::process_key_distribute(slave, f.witness(2), kCode, bad, f.rng);
        REQUIRE_FALSE(out.result.accepted);
    }

    SECTION("witness within per-block capability still accepted") {
        BitString noisy = f.witness(2);
        for (std::size_t block = 0; block < kCode.payload_len; ++block)
            noisy.flip(block * 3);
        const auto out = bsk::process_key_distribute(slave, noisy, kCode, kd, f.rng);
        REQUIRE(out.result.accepted);
        REQUIRE(*out.k_mn == *leader.keys.k_mn);
    }

    SECTION("two flips in one block reject with decommit_failed") {
        BitString noisy = f.witness(2);
        noisy.flip(0);
        noisy.flip(1);
        const auto out = bsk::process_key_distribute(slave, noisy, kCode, kd, f.rng);
        REQUIRE_FALSE(out.result.accepted);
        REQUIRE(out.result.reason == RejectReason::decommit_failed);
    }
}

TEST_CASE("rsi reply flow") {
    Fixture f;
    NodeState leader = f.make_node(1, true);
    NodeState slave = f.make_node(2);
    const ProtocolMessage kd =
        bsk::build_key_distribute(leader, f.witness(1), kCode, f.rng, Timestamp{1});
    REQUIRE(bsk::process_key_distribute(slave, f.witness(2), kCode, kd, f.rng).result.accepted);

    SECTION("not yet keyed build fails") {
        NodeState unkeyed = f.make_node(3);
        REQUIRE_THROWS_AS(bsk::build_rsi_reply(unkeyed, f.witness(3), kCode, Timestamp{2}),
                          std::logic_error);
    }

    const ProtocolMessage reply = bsk::build_rsi_reply(slave, f.witness(2), kCode, Timestamp{2});

    SECTION("leader registers matching pairwise key") {
        const auto out = bsk::process_rsi_reply(leader, f.witness(1), kCode, reply);
        REQUIRE(out.result.accepted);
        REQUIRE(*out.k_msi == *slave.keys.k_msi_own);
        REQUIRE(leader.keys.k_msi_peers.at(2) ==
                bsk::derive_node_key(*leader.keys.k_mn, *slave.keys.r_si));
    }

    SECTION("duplicate reply is stale") {
        REQUIRE(bsk::process_rsi_reply(leader, f.witness(1), kCode, reply).result.accepted);
        const auto out = bsk::process_rsi_reply(leader, f.witness(1), kCode, reply);
        REQUIRE(out.result.reason == RejectReason::stale_ts);
    }

    SECTION("tampered sender id breaks the mac") {
        ProtocolMessage bad = reply;
        bad.sender = NodeId{3};
        const auto out = bsk::process_rsi_reply(leader, f.witness(1), kCode, bad);
        REQUIRE(out.result.reason == RejectReason::bad_mac);
    }

    SECTION("reply committed under a different body's r_u fails decommit") {
        Fixture other(0x9999ULL); // distinct r_u
        NodeState foreign_slave = other.make_node(2);
        REQUIRE(bsk::process_key_distribute(foreign_slave, f.witness(2), kCode, kd, f.rng)
                    .result.reason == RejectReason::decommit_failed);
    }
}

TEST_CASE("sealed data contract") {
    Fixture f;
    bsk::SplitMix64 g(77);
    const BitString key = BitString::random(128, g);
    NodeState receiver = f.make_node(4);
    const std::vector<std::uint8_t> payload = {'h', 'e', 'l', 'l', 'o'};

    const ProtocolMessage sealed = bsk::seal_data(key, NodeId{2}, payload, Timestamp{10});
    REQUIRE(sealed.body != payload); // actually encrypted

    SECTION("round trip") {
        const auto out = bsk::open_data(key, receiver, sealed);
        REQUIRE(out.result.accepted);
        REQUIRE(out.plaintext == payload);
    }

    SECTION("replay is stale") {
        REQUIRE(bsk::open_data(key, receiver, sealed).result.accepted);
        REQUIRE(bsk::open_data(key, receiver, sealed).result.reason == RejectReason::stale_ts);
    }

    SECTION("wrong keys reject") {
        for (int i = 0; i < 1000; ++i) {
            const BitString other = BitString::random(128, g);
            if (other == key) continue;
            NodeState fresh = f.make_node(5);
            REQUIRE(bsk::open_data(other, fresh, sealed).result.reason == RejectReason::bad_mac);
        }
    }

    SECTION("ciphertext bit flip rejects") {
        ProtocolMessage bad = sealed;
        bad.body[2] ^= 0x04;
        REQUIRE(bsk::open_data(key, receiver, bad).result.reason == RejectReason::bad_mac);
    }

    SECTION("timestamp bit flip rejects") {
        ProtocolMessage bad = sealed;
        bad.ts.ticks ^= 0x100;
        REQUIRE(bsk::open_data(key, receiver, bad).result.reason == RejectReason::bad_mac);
    }
}

TEST_CASE("group messages verify under ks") {
    Fixture f;
    NodeState leader = f.make_node(1, true);
    NodeState slave = f.make_node(2);
    const ProtocolMessage kd =
        bsk::build_key_distribute(leader, f.witness(1), kCode, f.rng, Timestamp{1});
    REQUIRE(bsk::process_key_distribute(slave, f.witness(2), kCode, kd, f.rng).result.accepted);

    const ProtocolMessage call = bsk::build_election_call(leader, 1, Timestamp{5});
    REQUIRE(bsk::process_group_message(slave, call).accepted);

    ProtocolMessage bad = bsk::build_vote(slave, NodeId{3}, Timestamp{6});
    bad.body[1] ^= 0x01;
    REQUIRE(bsk::process_group_message(leader, bad).reason == RejectReason::bad_mac);

    NodeState unkeyed = f.make_node(9);
    REQUIRE(bsk::process_group_message(unkeyed, call).reason == RejectReason::not_keyed);
}

TEST_CASE("mac covers every byte of the serialized prefix") {
    Fixture f;
    NodeState leader = f.make_node(1, true);
    NodeState slave = f.make_node(2);
    const ProtocolMessage kd =
        bsk::build_key_distribute(leader, f.witness(1), kCode, f.rng, Timestamp{1});
    std::vector<std::uint8_t> bytes = kd.serialize();

    bsk::SplitMix64 g(123);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::uint8_t> mutated = bytes;
        const std::size_t bit = static_cast<std::size_t>(g.below((mutated.size() - 16) * 8));
        mutated[bit / 8] ^= static_cast<std::uint8_t>(1u << (7 - bit % 8));
        const auto parsed = ProtocolMessage::parse(mutated);
        if (!parsed) continue; // framing violation, rejected earlier
        NodeState fresh = f.make_node(2);
        const auto out = bsk::process_key_distribute(fresh, f.witness(2), kCode, *parsed, f.rng);
        REQUIRE_FALSE(out.result.accepted);
    }
}
