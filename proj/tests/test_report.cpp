#include <catch2/catch_amalgamated.hpp>

#include "bsk/report.hpp"

using bsk::SimConfig;

namespace {

SimConfig sweep_base() {
    SimConfig cfg;
    cfg.node_count = 8;
    cfg.seed = 11;
    cfg.max_ticks = 4;
    cfg.code = bsk::CodeParams{"repetition", 384, 128, 3};
    cfg.p = 0.01;
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
    return cfg;
}

} // namespace

TEST_CASE("analytic chain matches frozen oracle values") {
    using namespace bsk::analytic;
    REQUIRE(fused_bit_error_rate(0.1, 3) == Catch::Approx(0.028).margin(1e-12));
    REQUIRE(establishment_success_rate(0.01, 3, 3, 128) ==
            Catch::Approx(0.9998637417005318).margin(1e-9));
    REQUIRE(establishment_success_rate(0.05, 1, 3, 128) ==
            Catch::Approx(0.037329084142446296).margin(1e-9));
    REQUIRE(establishment_success_rate(0.05, 3, 3, 128) ==
            Catch::Approx(0.924196798225327).margin(1e-9));
    REQUIRE(establishment_success_rate(0.05, 5, 3, 128) ==
            Catch::Approx(0.9979498618516911).margin(1e-9));
}

TEST_CASE("sweep over p: success weakly decreasing, tracks analytic") {
    const nlohmann::json table = bsk::sweep_json(sweep_base(), "p", {0.0, 0.005, 0.01, 0.02}, 4000);
    const auto& rows = table["rows"];
    REQUIRE(rows.size() == 4);
    REQUIRE(rows[0]["success_rate"].get<double>() == 1.0); // p = 0 is exact
    double prev = 2.0;
    double prev_analytic = 2.0;
    for (const auto& row : rows) {
        const double rate = row["success_rate"].get<double>();
        const double analytic = row["analytic"].get<double>();
        REQUIRE(rate <= prev + 0.005); // weak decrease within sampling noise
        REQUIRE(analytic < prev_analytic);
        REQUIRE(std::abs(rate - analytic) < 0.01);
        prev = rate;
        prev_analytic = analytic;
    }
}

TEST_CASE("sweep over R at p = 0.05: success increasing") {
    SimConfig cfg = sweep_base();
    cfg.p = 0.05;
    const nlohmann::json table = bsk::sweep_json(cfg, "R", {1, 3, 5}, 2000);
    const auto& rows = table["rows"];
    REQUIRE(rows[0]["success_rate"].get<double>() < rows[1]["success_rate"].get<double>());
    REQUIRE(rows[1]["success_rate"].get<double>() < rows[2]["success_rate"].get<double>());
    for (const auto& row : rows)
        REQUIRE(std::abs(row["success_rate"].get<double>() - row["analytic"].get<double>()) < 0.05);
}

TEST_CASE("sweep over code.D at p = 0.02: stronger codes win") {
    SimConfig cfg = sweep_base();
    cfg.p = 0.02;
    const nlohmann::json table = bsk::sweep_json(cfg, "code.D", {1, 3, 5}, 2000);
    const auto& rows = table["rows"];
    REQUIRE(rows[0]["success_rate"].get<double>() < rows[1]["success_rate"].get<double>());
    REQUIRE(rows[1]["success_rate"].get<double>() <= rows[2]["success_rate"].get<double>());
}

TEST_CASE("sweep over t reports similarity-vs-decommit inconsistency") {
    // At p = 0.15 almost no pair decommits (s is about 0.009) and witness
    // distances concentrate near mu*M, far from zero. A threshold of t = 0
    // then agrees with decommit on nearly every pair, while t = M calls
    // everything similar and disagrees almost always.
    SimConfig cfg = sweep_base();
    cfg.p = 0.15;
    const nlohmann::json table = bsk::sweep_json(cfg, "t", {0, 384}, 1000);
    const auto& rows = table["rows"];
    REQUIRE(rows[0].contains("similarity_inconsistency_rate"));
    REQUIRE(rows[0]["similarity_inconsistency_rate"].get<double>() < 0.05);
    REQUIRE(rows[1]["similarity_inconsistency_rate"].get<double>() > 0.9);
    REQUIRE(rows[0]["analytic"].is_null());
}

TEST_CASE("sweep with one trial stays well-formed") {
    const nlohmann::json table = bsk::sweep_json(sweep_base(), "p", {0.01}, 1);
    const auto& row = table["rows"][0];
    const double rate = row["success_rate"].get<double>();
    REQUIRE((rate == 0.0 || rate == 1.0));
    REQUIRE_FALSE(row["analytic"].is_null());
}

TEST_CASE("sweep over N aggregates full runs") {
    SimConfig cfg = sweep_base();
    cfg.p = 0.0;
    cfg.max_ticks = 10;
    const nlohmann::json table = bsk::sweep_json(cfg, "N", {4, 8}, 2);
    const auto& rows = table["rows"];
    REQUIRE(rows[0]["success_rate"].get<double>() == 1.0);
    REQUIRE(rows[1]["success_rate"].get<double>() == 1.0);
    REQUIRE(rows[0]["analytic"].is_null());
}

TEST_CASE("unknown sweep parameter is a config error") {
    REQUIRE_THROWS_AS(bsk::sweep_json(sweep_base(), "bogus", {1.0}, 10), bsk::ConfigError);
}

TEST_CASE("verdicts on a clean noiseless run all pass") {
    SimConfig cfg = sweep_base();
    cfg.p = 0.0;
    cfg.max_ticks = 120;
    const bsk::RunOutput out = bsk::execute_run(cfg);
    REQUIRE(out.pass);
    for (const auto& [name, val] : out.report["verdicts"].items()) {
        INFO(name);
        REQUIRE(val.get<bool>());
    }
    REQUIRE(out.report["analytic"]["establishment_success_rate"].get<double>() == 1.0);
    // Report embeds a config echo that reproduces the run.
    const bsk::SimConfig echoed = bsk::parse_config(out.report["config"]);
    const bsk::RunOutput again = bsk::execute_run(echoed);
    REQUIRE(again.report.dump() == out.report.dump());
}

TEST_CASE("attack evaluations count adversary outcomes") {
    SimConfig cfg = sweep_base();
    cfg.p = 0.0;
    cfg.max_ticks = 200;

    const nlohmann::json replay = bsk::attack_json(cfg, bsk::AdversaryMode::replay);
    REQUIRE(replay["silent_acceptances"].get<std::uint64_t>() == 0);
    REQUIRE(replay["replay"]["attempts"].get<std::uint64_t>() > 0);
    REQUIRE(replay["replay"]["stale_rejects"] == replay["replay"]["attempts"]);
    REQUIRE(replay["pass"].get<bool>());

    const nlohmann::json tamper = bsk::attack_json(cfg, bsk::AdversaryMode::tamper);
    REQUIRE(tamper["silent_acceptances"].get<std::uint64_t>() == 0);
    REQUIRE(tamper["tamper_attempts"].get<std::uint64_t>() > 0);

    const nlohmann::json foreign = bsk::attack_json(cfg, bsk::AdversaryMode::foreign_body);
    REQUIRE(foreign["foreign_body"]["decommit_attempts"].get<std::uint64_t>() > 0);
    REQUIRE(foreign["foreign_body"]["successes"].get<std::uint64_t>() == 0);

    const nlohmann::json eaves = bsk::attack_json(cfg, bsk::AdversaryMode::eavesdrop);
    REQUIRE(eaves["confidentiality"]["checked"].get<bool>());
    REQUIRE(eaves["confidentiality"]["ok"].get<bool>());
}
