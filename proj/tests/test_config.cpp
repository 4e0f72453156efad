#include <catch2/catch_amalgamated.hpp>

#include "bsk/config.hpp"

namespace {

nlohmann::json default_doc() {
    return nlohmann::json::parse(R"({
      "node_count": 8,
      "seed": 1,
      "max_ticks": 600,
      "code": {"name": "repetition", "M": 384, "K": 128, "D": 3},
      "biometric": {"p": 0.01, "R": 3, "t": 24, "epoch_period_ticks": 96},
      "hash": "sha256",
      "energy": {
        "initial": 5000.0,
        "threshold": 10.0,
        "costs": {"send": 1.0, "receive": 0.5, "commit_op": 0.8,
                  "decommit_op": 0.8, "mac_op": 0.2, "idle_tick": 0.01}
      },
      "vote_timeout_ticks": 50,
      "beacon_interval_ticks": 20,
      "data_interval_ticks": 10,
      "retry_interval_ticks": 16,
      "mesh": "ring",
      "drop_rate": 0.0,
      "adversary": {"mode": "none", "rate": 0.0, "foreign_seed": 99}
    })");
}

} // namespace

TEST_CASE("default config parses") {
    const bsk::SimConfig cfg = bsk::parse_config(default_doc());
    REQUIRE(cfg.node_count == 8);
    REQUIRE(cfg.code.codeword_len == 384);
    REQUIRE(cfg.witness_len() == 384);
    REQUIRE(cfg.adversary.mode == bsk::AdversaryMode::none);
}

TEST_CASE("missing fields name their path") {
    nlohmann::json doc = default_doc();
    doc["code"].erase("D");
    try {
        bsk::parse_config(doc);
        FAIL("expected ConfigError");
    } catch (const bsk::ConfigError& e) {
        REQUIRE(e.field() == "code.D");
        REQUIRE(std::string(e.what()).find("code.D") != std::string::npos);
    }
}

TEST_CASE("range violations carry field names") {
    auto expect_field = [](nlohmann::json doc, const std::string& field) {
        try {
            bsk::parse_config(doc);
            FAIL("expected ConfigError for " + field);
        } catch (const bsk::ConfigError& e) {
            REQUIRE(e.field() == field);
        }
    };

    nlohmann::json doc = default_doc();
    doc["biometric"]["p"] = 0.5;
    expect_field(doc, "biometric.p");

    doc = default_doc();
    doc["biometric"]["R"] = 4;
    expect_field(doc, "biometric.R");

    doc = default_doc();
    doc["code"]["M"] = 300;
    expect_field(doc, "code");

    doc = default_doc();
    doc["adversary"]["mode"] = "quantum";
    expect_field(doc, "adversary.mode");

    doc = default_doc();
    doc["energy"]["costs"].erase("mac_op");
    expect_field(doc, "energy.costs.mac_op");

    doc = default_doc();
    doc["hash"] = "md5";
    expect_field(doc, "hash");

    doc = default_doc();
    doc["node_count"] = 1;
    expect_field(doc, "node_count");
}

TEST_CASE("config echo round trips") {
    nlohmann::json doc = default_doc();
    doc["energy"]["initial_overrides"] = {{"1", 60.0}, {"5", 900.0}};
    doc["mesh"] = "full";
    const bsk::SimConfig cfg = bsk::parse_config(doc);
    const nlohmann::json echo = bsk::config_json(cfg);
    const bsk::SimConfig again = bsk::parse_config(echo);
    REQUIRE(bsk::config_json(again) == echo);
    REQUIRE(again.energy_overrides.at(1) == 60.0);
    REQUIRE(again.energy_overrides.at(5) == 900.0);
    REQUIRE(again.mesh == bsk::MeshTopology::full);
}
