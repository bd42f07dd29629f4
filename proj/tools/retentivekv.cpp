// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "retentivekv/retentivekv.hpp"

namespace {

using namespace rkv;

struct RunSpec {
    std::string command;
    std::string config_path;
    std::string output_dir = "out";
    std::optional<std::uint64_t> seed_override;
    std::size_t jobs = 1;
};

std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("RETENTIVEKV_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    try {
        std::size_t used = 0;
        const auto s = std::stoull(v, &used);
        if (used != std::string(v).size()) throw std::invalid_argument("trailing");
        return s;
    } catch (const std::exception&) {
        throw Error(Errc::TypeError, fmt::format("RETENTIVEKV_SEED must be an unsigned integer, got '{}'", v));
    }
}

ExperimentConfig load(const RunSpec& spec) {
    const auto seed = spec.seed_override ? spec.seed_override : env_seed();
    ExperimentConfig cfg = parse_config(spec.config_path, seed.has_value());
    if (seed) cfg.workload.seed = *seed;
    cfg.workload.validate();
    return cfg;
}

/// Config with every auto-gated policy's gate replaced by a fitted one.
std::vector<PolicyConfig> resolve_gates(const ExperimentConfig& cfg) {
    std::vector<PolicyConfig> out = cfg.policies;
    for (auto& p : out) {
        if (!cfg.has_auto_gate(p.name) || p.kind != PolicyKind::RetentiveKV) continue;
        const GateFit fit = calibrate_gate(p, cfg.workload, cfg.calibration_seeds);
        if (!fit.degenerate) p.gate = fit.params;
        std::cerr << fmt::format("gate for {}: w_r={:.6g} b_r={:.6g}{}\n", p.name, p.gate.w_r, p.gate.b_r,
                                 fit.degenerate ? " (degenerate fit, defaults kept)" : "");
    }
    return out;
}

void print_table(const Table& t) { std::cout << to_csv(t); }

Report cmd_run(const ExperimentConfig& cfg, std::size_t jobs) {
    Report r{"run", {sweep_header(), {}}, {}, cfg};
    const auto policies = resolve_gates(cfg);
    for (const auto& p : policies) {
        const std::vector<double> budget = {p.budget.fraction};
        const auto rows = budget_sweep(std::span(&p, 1), budget, cfg.workload, cfg.seeds, jobs);
        const Table t = sweep_table(rows, policies, cfg.seeds.size());
        r.summary.rows.insert(r.summary.rows.end(), t.rows.begin(), t.rows.end());
        for (const auto& m : rows.front().episodes) append_step_traces(r.trace, m, p.budget.fraction);
    }
    return r;
}

Report cmd_sweep(const ExperimentConfig& cfg, std::size_t jobs) {
    const auto policies = resolve_gates(cfg);
    const auto rows = budget_sweep(policies, cfg.budgets, cfg.workload, cfg.seeds, jobs);
    Report r{"sweep", sweep_table(rows, policies, cfg.seeds.size()), {}, cfg};
    for (const auto& row : rows) {
        for (const auto& m : row.episodes) append_step_traces(r.trace, m, row.budget);
    }
    return r;
}

const PolicyConfig& first_retentive(const std::vector<PolicyConfig>& policies) {
    for (const auto& p : policies) {
        if (p.kind == PolicyKind::RetentiveKV) return p;
    }
    throw Error(Errc::MissingKey, "this command needs a policy with kind = retentivekv");
}

Report cmd_ablate(const ExperimentConfig& cfg, std::size_t jobs) {
    const auto policies = resolve_gates(cfg);
    const PolicyConfig& base = first_retentive(policies);
    const auto rows = ablation_run(base, cfg.workload, cfg.seeds, jobs);
    Report r{"ablate", {{"config", "em", "ma", "qr", "policy", "budget", "seeds", "recon_mean", "recon_std"}, {}}, {}, cfg};
    for (const auto& row : rows) {
        r.summary.rows.push_back({row.label, row.flags.entropy_metric ? "1" : "0", row.flags.modality_states ? "1" : "0",
                                  row.flags.query_retrieval ? "1" : "0", base.name, csv_real(base.budget.fraction),
                                  std::to_string(cfg.seeds.size()), csv_real(row.recon.mean), csv_real(row.recon.stddev)});
        for (std::size_t s = 0; s < row.per_seed.size(); ++s) {
            nlohmann::ordered_json j;
            j["config"] = row.label;
            j["seed"] = cfg.seeds[s];
            j["recon_err"] = row.per_seed[s];
            r.trace.push_back(std::move(j));
        }
    }
    return r;
}

Report cmd_entropy(const ExperimentConfig& cfg, std::size_t jobs) {
    const auto policies = resolve_gates(cfg);
    auto find = [&](const std::string& name) -> const PolicyConfig& {
        for (const auto& p : policies) {
            if (p.name == name) return p;
        }
        throw Error(Errc::UnknownKey, fmt::format("entropy: no policy named '{}'", name));
    };
    const PolicyConfig& a = find(cfg.entropy_baseline);
    const PolicyConfig& b = find(cfg.entropy_compare);
    const auto rows = entropy_shift_report(cfg.workload, a, b, cfg.entropy_layers, cfg.seeds, jobs);
    Report r{"entropy-report", {{"layer", "baseline", "compare", "baseline_mean", "compare_mean", "delta"}, {}}, {}, cfg};
    for (const auto& row : rows) {
        r.summary.rows.push_back({std::to_string(row.layer), a.name, b.name, csv_real(row.mean_a), csv_real(row.mean_b),
                                  csv_real(row.delta)});
        nlohmann::ordered_json j;
        j["layer"] = row.layer;
        j["baseline_mean"] = row.mean_a;
        j["compare_mean"] = row.mean_b;
        j["delta"] = row.delta;
        r.trace.push_back(std::move(j));
    }
    return r;
}

Report cmd_calibrate(const ExperimentConfig& cfg) {
    Report r{"calibrate", {{"policy", "w_r", "b_r", "degenerate", "samples"}, {}}, {}, cfg};
    for (const auto& p : cfg.policies) {
        if (p.kind != PolicyKind::RetentiveKV) continue;
        const GateFit fit = calibrate_gate(p, cfg.workload, cfg.calibration_seeds);
        r.summary.rows.push_back({p.name, csv_real(fit.params.w_r), csv_real(fit.params.b_r),
                                  fit.degenerate ? "1" : "0", std::to_string(fit.samples)});
        nlohmann::ordered_json j;
        j["policy"] = p.name;
        j["w_r"] = fit.params.w_r;
        j["b_r"] = fit.params.b_r;
        j["degenerate"] = fit.degenerate;
        r.trace.push_back(std::move(j));
    }
    if (r.summary.rows.empty()) throw Error(Errc::MissingKey, "calibrate needs a policy with kind = retentivekv");
    return r;
}

int dispatch(const RunSpec& spec) {
    if (spec.command == "selftest") return run_selftest(std::cout);
    if (spec.config_path.empty()) throw Error(Errc::MissingKey, "--config is required for " + spec.command);
    const ExperimentConfig cfg = load(spec);
    Report r;
    if (spec.command == "run") r = cmd_run(cfg, spec.jobs);
    else if (spec.command == "sweep") r = cmd_sweep(cfg, spec.jobs);
    else if (spec.command == "ablate") r = cmd_ablate(cfg, spec.jobs);
    else if (spec.command == "entropy-report") r = cmd_entropy(cfg, spec.jobs);
    else r = cmd_calibrate(cfg);
    emit_reports(r, spec.output_dir);
    print_table(r.summary);
    return 0;
}

constexpr const char* kConfigHelp = R"(Config file (INI-style; '#' starts a comment):
  seeds = 0..19                 episode seed list (comma list, a..b ranges)       [0]
  [workload]
    d                           head dimension (required)
    seed                        base seed (required unless --seed/RETENTIVEKV_SEED)
    grid_rows, grid_cols        patch grid per image                             [4, 4]
    images                      number of images                                 [6]
    text_len                    text prompt tokens                               [24]
    decode_steps                decode steps                                     [32]
    planted                     deferred-critical patches                        [4]
    defer_until                 first step whose query targets planted patches   [16]
    query_scale                 query norm in units of sqrt(d)                   [10]
    salient_per_image           patches targeted by early queries per image      [1]
    background_bias, text_bias  key offsets along the prompt direction           [0.5, 0.5]
    late_alignment              cosine of late queries with their planted key    [0.95]
  [policy.NAME]                 (default set: full, sliding_window, heavy_hitter, snapkv, retentivekv)
    kind                        full|sliding_window|heavy_hitter|snapkv|retentivekv [NAME]
    budget                      kept fraction in (0,1]                           [0.2; full: 1]
    window                      recent-token window W                            [derived from budget]
    sinks                       sink tokens (sliding_window)                     [4]
    snap_window, pool           observation queries and pool width (snapkv)      [4, 3]
    lambda, tau_quantile        retention mix and absorb quantile                [0.5, 0.5]
    tau_absolute                absolute absorb threshold (overrides quantile)   [unset]
    gate_w, gate_b              retrieval gate parameters                        [1, 0]
    gate_auto                   fit the gate on [calibrate] seeds before running [false]
    em, ma, qr                  entropy metric / modality states / retrieval     [true]
    entropy_cut                 recall-state entropy cut                         [batch median]
    fuse                        gated|unit                                       [gated]
  [sweep]     budgets = 0.05,0.2,0.35,0.5
  [entropy]   layers = 8, baseline = full, compare = heavy_hitter
  [calibrate] seeds = 1000..1004
)";

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RetentiveKV: KV-cache eviction with continuous state memories, desk-scale simulator"};
    app.footer(kConfigHelp);
    app.require_subcommand(1);
    RunSpec spec;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"run", "run each configured policy at its own budget"},
        {"sweep", "budget sweep of every policy"},
        {"ablate", "RetentiveKV component ablation"},
        {"entropy-report", "per-layer cross-modal entropy shift between two policies"},
        {"calibrate", "fit the retrieval gate of each retentivekv policy"},
        {"selftest", "run the built-in invariant suites"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", spec.config_path, "config file")->check(CLI::ExistingFile);
        sub->add_option("--out", spec.output_dir, "output directory")->capture_default_str();
        sub->add_option("--seed", spec.seed_override, "base seed (overrides workload.seed and RETENTIVEKV_SEED)");
        sub->add_option("--jobs", spec.jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
        sub->callback([&spec, n = name] { spec.command = n; });
    }
    CLI11_PARSE(app, argc, argv);
    try {
        return dispatch(spec);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
