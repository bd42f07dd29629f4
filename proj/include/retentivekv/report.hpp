// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "retentivekv/config.hpp"
#include "retentivekv/error.hpp"
#include "retentivekv/harness.hpp"

namespace rkv {

inline constexpr const char* kVersion = "0.1.0";

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

struct Report {
    std::string command;
    Table summary;
    std::vector<nlohmann::ordered_json> trace;
    ExperimentConfig config;
};

/// Locale-free number formatting shared by every CSV column.
inline std::string csv_real(double x) { return fmt::format("{:.10g}", x); }

inline std::string to_csv(const Table& t) {
    auto line = [](const std::vector<std::string>& cells) {
        std::string out;
        for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
        return out + "\n";
    };
    std::string out = line(t.header);
    for (const auto& r : t.rows) {
        if (r.size() != t.header.size()) throw Error(Errc::ShapeMismatch, "CSV row width != header width");
        out += line(r);
    }
    return out;
}

inline std::string manifest_text(const Report& r) {
    return fmt::format("# Rerun with: retentivekv {} --config manifest.ini --out DIR\n{}\n[run]\ncommand = {}\nversion = {}\n",
                       r.command, to_ini(r.config), r.command, kVersion);
}

namespace report_detail {
inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, fmt::format("cannot open '{}' for writing", p.string()));
    out << text;
    out.flush();
    if (!out) throw Error(Errc::IoError, fmt::format("write to '{}' failed", p.string()));
}
}  // namespace report_detail

/// Writes summary.csv, trace.jsonl and manifest.ini into `dir`, creating it if needed.
inline void emit_reports(const Report& r, const std::filesystem::path& dir) {
    if (r.summary.rows.empty()) throw Error(Errc::InvalidArgument, "refusing to emit an empty summary table");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw Error(Errc::IoError, fmt::format("cannot create output directory '{}'", dir.string()));
    }
    report_detail::write_file(dir / "summary.csv", to_csv(r.summary));
    std::string trace;
    for (const auto& rec : r.trace) trace += rec.dump() + "\n";
    report_detail::write_file(dir / "trace.jsonl", trace);
    report_detail::write_file(dir / "manifest.ini", manifest_text(r));
}

inline const std::vector<std::string>& sweep_header() {
    static const std::vector<std::string> h = {"policy", "kind", "budget", "seeds", "recon_mean", "recon_std",
                                               "retained_fraction", "mean_flops", "mean_peak_cache_bytes",
                                               "state_count", "monotonicity_violations"};
    return h;
}

inline void append_step_traces(std::vector<nlohmann::ordered_json>& out, const EpisodeMetrics& m, double budget) {
    for (const auto& s : m.trace) {
        nlohmann::ordered_json j;
        j["step"] = s.step;
        j["policy"] = m.policy;
        j["budget"] = budget;
        j["seed"] = m.seed;
        j["kept"] = s.kept;
        j["absorbed"] = s.absorbed;
        j["dropped"] = s.dropped;
        j["recon_err"] = s.recon_err;
        j["entropy_total"] = s.entropy_total;
        out.push_back(std::move(j));
    }
}

inline Table sweep_table(const std::vector<SweepRow>& rows, std::span<const PolicyConfig> policies, std::size_t seeds) {
    Table t{sweep_header(), {}};
    for (const auto& r : rows) {
        PolicyKind kind = PolicyKind::FullCache;
        for (const auto& p : policies) {
            if (p.name == r.policy) kind = p.kind;
        }
        t.rows.push_back({r.policy, std::string(to_string(kind)), csv_real(r.budget), std::to_string(seeds),
                          csv_real(r.recon.mean), csv_real(r.recon.stddev), csv_real(r.retained_fraction),
                          csv_real(r.mean_flops), csv_real(r.mean_peak_bytes), std::to_string(r.state_count),
                          std::to_string(r.monotonicity_violations)});
    }
    return t;
}

}  // namespace rkv
