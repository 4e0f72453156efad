// Scenario runner for the biometric key-establishment simulator: single runs
// with verdicts, parameter sweeps, adversary evaluations, and an annotated
// demo trace.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bsk/config.hpp"
#include "bsk/report.hpp"
#include "bsk/simnet.hpp"

namespace {

enum class LogLevel { off = 0, info = 1, debug = 2 };

LogLevel log_level() {
    const char* env = std::getenv("BSK_LOG");
    if (!env) return LogLevel::off;
    const std::string v = env;
    if (v == "debug") return LogLevel::debug;
    if (v == "info") return LogLevel::info;
    return LogLevel::off;
}

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::info) std::cerr << "[bsk] " << msg << "\n";
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << content;
}

bsk::SimConfig load_with_seed(const std::string& config_path, const std::optional<std::uint64_t>& seed) {
    bsk::SimConfig cfg = bsk::load_config(config_path);
    if (seed) cfg.seed = *seed;
    return cfg;
}

std::vector<double> parse_values_csv(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    if (out.empty()) throw bsk::ConfigError("values", "no values given");
    return out;
}

int cmd_run(const std::string& config_path, const std::optional<std::uint64_t>& seed,
            const std::string& out_dir) {
    const bsk::SimConfig cfg = load_with_seed(config_path, seed);
    log_info("running simulation, seed " + std::to_string(cfg.seed));
    const bsk::RunOutput out = bsk::execute_run(cfg);

    std::filesystem::create_directories(out_dir);
    write_file(std::filesystem::path(out_dir) / "trace.jsonl", out.trace_jsonl);
    write_file(std::filesystem::path(out_dir) / "metrics.json", out.metrics_json.dump(2) + "\n");
    write_file(std::filesystem::path(out_dir) / "report.json", out.report.dump(2) + "\n");

    for (const auto& [name, pass] : out.report["verdicts"].items())
        std::cout << (pass.get<bool>() ? "[PASS] " : "[FAIL] ") << name << "\n";
    std::cout << (out.pass ? "RUN PASS" : "RUN FAIL") << "\n";
    return out.pass ? 0 : 1;
}

int cmd_sweep(const std::string& config_path, const std::optional<std::uint64_t>& seed,
              const std::string& param, const std::string& values_csv, std::uint64_t trials,
              const std::string& out_dir) {
    const bsk::SimConfig cfg = load_with_seed(config_path, seed);
    const std::vector<double> values = parse_values_csv(values_csv);
    log_info("sweeping " + param + " over " + std::to_string(values.size()) + " values");
    const nlohmann::json table = bsk::sweep_json(cfg, param, values, trials);

    std::filesystem::create_directories(out_dir);
    write_file(std::filesystem::path(out_dir) / "sweep.json", table.dump(2) + "\n");

    std::cout << "param=" << param << " trials=" << trials << "\n";
    std::cout << "value\tsuccess_rate\tanalytic\tabs_gap\n";
    for (const auto& row : table["rows"]) {
        std::cout << row["value"].get<double>() << "\t" << row["success_rate"].get<double>() << "\t";
        if (row["analytic"].is_null())
            std::cout << "n/a\tn/a";
        else
            std::cout << row["analytic"].get<double>() << "\t" << row["abs_gap"].get<double>();
        if (row.contains("similarity_inconsistency_rate"))
            std::cout << "\tinconsistency=" << row["similarity_inconsistency_rate"].get<double>();
        std::cout << "\n";
    }
    return 0;
}

int cmd_attack(const std::string& config_path, const std::optional<std::uint64_t>& seed,
               const std::string& mode_name, const std::string& out_dir) {
    const bsk::SimConfig cfg = load_with_seed(config_path, seed);
    const bsk::AdversaryMode mode = bsk::adversary_mode_from_string(mode_name, "mode");
    log_info("attack evaluation: " + mode_name);
    const nlohmann::json report = bsk::attack_json(cfg, mode);

    std::filesystem::create_directories(out_dir);
    write_file(std::filesystem::path(out_dir) / "attack.json", report.dump(2) + "\n");

    std::cout << "mode=" << mode_name << " attempts=" << report["attempts"].get<std::uint64_t>()
              << " silent_acceptances=" << report["silent_acceptances"].get<std::uint64_t>() << "\n";
    for (const auto& [reason, count] : report["rejects_by_reason"].items())
        std::cout << "  reject " << reason << ": " << count.get<std::uint64_t>() << "\n";
    if (mode == bsk::AdversaryMode::foreign_body)
        std::cout << "  foreign decommit attempts="
                  << report["foreign_body"]["decommit_attempts"].get<std::uint64_t>()
                  << " successes=" << report["foreign_body"]["successes"].get<std::uint64_t>() << "\n";
    const bool pass = report["pass"].get<bool>();
    std::cout << (pass ? "ATTACK PASS" : "ATTACK FAIL") << "\n";
    return pass ? 0 : 1;
}

int cmd_demo(const std::optional<std::string>& config_path) {
    bsk::SimConfig cfg;
    if (config_path) {
        cfg = bsk::load_config(*config_path);
    } else {
        cfg.node_count = 3;
        cfg.seed = 7;
        cfg.max_ticks = 24;
        cfg.p = 0.0;
        cfg.R = 3;
        cfg.t = 24;
        cfg.epoch_period_ticks = 96;
        cfg.energy_initial = 1000.0;
        cfg.energy_threshold = 1.0;
        cfg.costs[bsk::EnergyAction::send] = 1.0;
        cfg.costs[bsk::EnergyAction::receive] = 0.5;
        cfg.costs[bsk::EnergyAction::commit_op] = 0.8;
        cfg.costs[bsk::EnergyAction::decommit_op] = 0.8;
        cfg.costs[bsk::EnergyAction::mac_op] = 0.2;
        cfg.costs[bsk::EnergyAction::idle_tick] = 0.01;
        cfg.vote_timeout_ticks = 50;
        cfg.data_interval_ticks = 8;
    }
    cfg.validate();
    bsk::Simulation sim(cfg);
    sim.run();

    std::cout << "single establishment, " << cfg.node_count << " nodes, p=" << cfg.p << "\n";
    for (const bsk::TraceEvent& e : sim.trace()) {
        std::cout << "t=" << e.tick << " " << e.kind;
        if (e.kind == "send" || e.kind == "deliver" || e.kind == "accept" || e.kind == "reject") {
            std::cout << " " << e.from << "->" << (e.to == 0xffff ? std::string("all")
                                                                  : std::to_string(e.to));
            if (!e.reason.empty()) std::cout << " (" << e.reason << ")";
            if (!e.digest_hex.empty()) std::cout << " msg=" << e.digest_hex.substr(0, 12);
        } else if (!e.reason.empty()) {
            std::cout << " " << e.from << " " << e.reason;
        }
        std::cout << "\n";
    }
    const bsk::Metrics& m = sim.metrics();
    std::cout << "establishment accepts " << m.establishment_accepts << "/"
              << m.establishment_attempts << ", agreement "
              << (m.key_agreement_ok ? "ok" : "BROKEN") << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"biometric symmetric-key establishment simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::string param;
    std::string values_csv;
    std::uint64_t trials = 2000;
    std::string mode_name;
    std::optional<std::string> demo_config;

    CLI::App* run = app.add_subcommand("run", "execute one simulation and report verdicts");
    run->add_option("--config", config_path, "config JSON path")->required();
    run->add_option("--seed", seed, "override the config seed");
    run->add_option("--out", out_dir, "output directory");

    CLI::App* sweep = app.add_subcommand("sweep", "sweep one parameter and tabulate success rates");
    sweep->add_option("--config", config_path, "config JSON path")->required();
    sweep->add_option("--param", param, "one of p, R, t, N, code.D")->required();
    sweep->add_option("--values", values_csv, "comma-separated values")->required();
    sweep->add_option("--trials", trials, "trials per value");
    sweep->add_option("--seed", seed, "override the config seed");
    sweep->add_option("--out", out_dir, "output directory");

    CLI::App* attack = app.add_subcommand("attack", "run one adversary mode and count outcomes");
    attack->add_option("--config", config_path, "config JSON path")->required();
    attack->add_option("--mode", mode_name, "adversary mode")->required();
    attack->add_option("--seed", seed, "override the config seed");
    attack->add_option("--out", out_dir, "output directory");

    CLI::App* demo = app.add_subcommand("demo", "print an annotated single-establishment trace");
    demo->add_option("--config", demo_config, "optional config JSON path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, seed, out_dir);
        if (sweep->parsed()) return cmd_sweep(config_path, seed, param, values_csv, trials, out_dir);
        if (attack->parsed()) return cmd_attack(config_path, seed, mode_name, out_dir);
        if (demo->parsed()) return cmd_demo(demo_config);
    } catch (const bsk::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
