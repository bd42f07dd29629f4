// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "retentivekv/error.hpp"
#include "retentivekv/harness.hpp"
#include "retentivekv/policies.hpp"

namespace rkv {

/// Everything a CLI command needs, as read from an INI-style file.
///
/// Keys are `section.key` (or `key` inside a `[section]` header); policy sections are
/// named `[policy.NAME]`. Top-level `seeds` accepts a comma list with `a..b` ranges.
struct ExperimentConfig {
    WorkloadConfig workload;
    std::vector<PolicyConfig> policies;
    std::vector<double> budgets = {0.05, 0.2, 0.35, 0.5};
    std::vector<std::uint64_t> seeds = {0};
    std::vector<std::uint64_t> calibration_seeds = {1000, 1001, 1002, 1003, 1004};
    std::size_t entropy_layers = 8;
    std::string entropy_baseline = "full";
    std::string entropy_compare = "heavy_hitter";
    std::vector<std::string> auto_gate;  // policies whose gate is fitted before running

    const PolicyConfig& policy(std::string_view name) const {
        for (const auto& p : policies) {
            if (p.name == name) return p;
        }
        throw Error(Errc::UnknownKey, fmt::format("no policy named '{}'", name));
    }
    bool has_auto_gate(std::string_view name) const {
        return std::find(auto_gate.begin(), auto_gate.end(), name) != auto_gate.end();
    }
};

inline std::vector<PolicyConfig> default_policies() {
    std::vector<PolicyConfig> out;
    for (auto k : {PolicyKind::FullCache, PolicyKind::SlidingWindow, PolicyKind::HeavyHitter, PolicyKind::SnapKV,
                   PolicyKind::RetentiveKV}) {
        PolicyConfig p;
        p.kind = k;
        p.name = std::string(to_string(k));
        p.budget.fraction = k == PolicyKind::FullCache ? 1.0 : 0.2;
        out.push_back(p);
    }
    return out;
}

namespace config_detail {

inline const std::vector<std::string>& workload_keys() {
    static const std::vector<std::string> k = {"d", "grid_rows", "grid_cols", "images", "text_len", "decode_steps",
                                               "planted", "defer_until", "seed", "query_scale", "salient_per_image",
                                               "background_bias", "text_bias", "late_alignment"};
    return k;
}
inline const std::vector<std::string>& policy_keys() {
    static const std::vector<std::string> k = {"kind", "budget", "window", "sinks", "snap_window", "pool",
                                               "lambda", "tau_quantile", "tau_absolute", "gate_w", "gate_b",
                                               "gate_auto", "em", "ma", "qr", "entropy_cut", "fuse"};
    return k;
}
inline const std::map<std::string, std::vector<std::string>>& section_keys() {
    static const std::map<std::string, std::vector<std::string>> k = {
        {"workload", workload_keys()},
        {"policy", policy_keys()},
        {"sweep", {"budgets"}},
        {"entropy", {"layers", "baseline", "compare"}},
        {"calibrate", {"seeds"}},
        {"run", {"command", "version"}},
    };
    return k;
}

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1);
    std::vector<std::size_t> cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline std::string closest(std::string_view word, const std::vector<std::string>& options) {
    std::string best;
    std::size_t best_d = std::string::npos;
    for (const auto& o : options) {
        const std::size_t dist = edit_distance(word, o);
        if (dist < best_d) {
            best_d = dist;
            best = o;
        }
    }
    return best;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

/// Nearest valid spelling for an unknown dotted key, compared segment by segment.
inline std::string suggest_key(const std::string& key) {
    const auto parts = split(key, '.');
    std::vector<std::string> sections = {"seeds"};
    for (const auto& [s, keys] : section_keys()) sections.push_back(s);
    const std::string section = closest(parts.front(), sections);
    if (section == "seeds") return "seeds";
    const auto& keys = section_keys().at(section);
    const std::string leaf = parts.size() > 1 ? closest(parts.back(), keys) : keys.front();
    if (section == "policy") {
        const std::string name = parts.size() > 2 ? parts[1] : "<name>";
        return "policy." + name + "." + leaf;
    }
    return section + "." + leaf;
}

struct Raw {
    std::string value;
    std::size_t line = 0;
};

class Reader {
public:
    Reader(const std::map<std::string, Raw>& raw) : m_raw(raw) {}

    bool has(const std::string& key) const { return m_raw.count(key) != 0; }

    template <typename T>
    std::optional<T> get(const std::string& key) const {
        auto it = m_raw.find(key);
        if (it == m_raw.end()) return std::nullopt;
        return parse<T>(key, it->second);
    }

    template <typename T>
    void read(const std::string& key, T& out) const {
        if (auto v = get<T>(key)) out = *v;
    }

    template <typename T>
    static T parse(const std::string& key, const Raw& raw) {
        const std::string& s = raw.value;
        auto fail = [&](std::string_view what) {
            return Error(Errc::TypeError,
                         fmt::format("line {}: key '{}' expects {}, got '{}'", raw.line, key, what, s));
        };
        if constexpr (std::is_same_v<T, bool>) {
            if (s == "true" || s == "1" || s == "on") return true;
            if (s == "false" || s == "0" || s == "off") return false;
            throw fail("a boolean");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (s.empty()) throw fail("a nonempty string");
            return s;
        } else if constexpr (std::is_same_v<T, double>) {
            double v = 0.0;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) throw fail("a real number");
            return v;
        } else {
            T v{};
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || p != s.data() + s.size()) throw fail("a nonnegative integer");
            return v;
        }
    }

private:
    const std::map<std::string, Raw>& m_raw;
};

inline std::vector<std::uint64_t> parse_seed_list(const std::string& key, const Raw& raw) {
    std::vector<std::uint64_t> out;
    for (const auto& item : split(raw.value, ',')) {
        const std::string t = trim(item);
        const auto dots = t.find("..");
        if (dots == std::string::npos) {
            out.push_back(Reader::parse<std::uint64_t>(key, {t, raw.line}));
            continue;
        }
        const auto lo = Reader::parse<std::uint64_t>(key, {t.substr(0, dots), raw.line});
        const auto hi = Reader::parse<std::uint64_t>(key, {t.substr(dots + 2), raw.line});
        if (hi < lo) throw Error(Errc::TypeError, fmt::format("line {}: empty seed range '{}'", raw.line, t));
        for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    }
    return out;
}

inline std::vector<double> parse_real_list(const std::string& key, const Raw& raw) {
    std::vector<double> out;
    for (const auto& item : split(raw.value, ',')) out.push_back(Reader::parse<double>(key, {trim(item), raw.line}));
    return out;
}

}  // namespace config_detail

/// Parses config text. `seed_overridden` lifts the requirement for workload.seed.
inline ExperimentConfig parse_config_text(std::string_view text, bool seed_overridden = false) {
    using namespace config_detail;
    std::map<std::string, Raw> raw;
    std::vector<std::string> policy_order;
    std::string section;
    std::size_t line_no = 0;
    for (const auto& line_raw : split(text, '\n')) {
        ++line_no;
        std::string line = line_raw;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw Error(Errc::TypeError, fmt::format("line {}: malformed section header", line_no));
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(Errc::TypeError, fmt::format("line {}: expected key = value", line_no));
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string full = section.empty() ? key : section + "." + key;
        const std::string value = trim(std::string_view(line).substr(eq + 1));

        // Validate the key shape.
        const auto parts = split(full, '.');
        bool ok = false;
        if (parts.size() == 1) {
            ok = parts[0] == "seeds";
        } else if (parts[0] == "policy") {
            ok = parts.size() == 3 && !parts[1].empty() &&
                 std::count(policy_keys().begin(), policy_keys().end(), parts[2]) != 0;
            if (ok && std::find(policy_order.begin(), policy_order.end(), parts[1]) == policy_order.end()) {
                policy_order.push_back(parts[1]);
            }
        } else if (parts.size() == 2 && section_keys().count(parts[0]) != 0) {
            const auto& keys = section_keys().at(parts[0]);
            ok = std::count(keys.begin(), keys.end(), parts[1]) != 0;
        }
        if (!ok) {
            // A dotted key under a section header may have been meant as absolute.
            std::string hint = suggest_key(full);
            if (!section.empty() && key.find('.') != std::string::npos) {
                const std::string alt = suggest_key(key);
                if (edit_distance(key, alt) < edit_distance(full, hint)) hint = alt;
            }
            throw Error(Errc::UnknownKey,
                        fmt::format("line {}: unknown key '{}' (did you mean '{}'?)", line_no, full, hint));
        }
        if (raw.count(full) != 0) {
            throw Error(Errc::TypeError, fmt::format("line {}: key '{}' repeated (first on line {})", line_no, full,
                                                     raw[full].line));
        }
        raw[full] = {value, line_no};
    }

    const Reader r(raw);
    ExperimentConfig cfg;
    if (!r.has("workload.d")) throw Error(Errc::MissingKey, "required key 'workload.d' is missing");
    if (!r.has("workload.seed") && !seed_overridden) {
        throw Error(Errc::MissingKey, "required key 'workload.seed' is missing (or pass --seed)");
    }
    auto& w = cfg.workload;
    r.read("workload.d", w.d);
    r.read("workload.grid_rows", w.grid_rows);
    r.read("workload.grid_cols", w.grid_cols);
    r.read("workload.images", w.images);
    r.read("workload.text_len", w.text_len);
    r.read("workload.decode_steps", w.decode_steps);
    r.read("workload.planted", w.planted);
    r.read("workload.defer_until", w.defer_until);
    r.read("workload.seed", w.seed);
    r.read("workload.query_scale", w.query_scale);
    r.read("workload.salient_per_image", w.salient_per_image);
    r.read("workload.background_bias", w.background_bias);
    r.read("workload.text_bias", w.text_bias);
    r.read("workload.late_alignment", w.late_alignment);

    if (r.has("seeds")) cfg.seeds = parse_seed_list("seeds", raw.at("seeds"));
    if (r.has("calibrate.seeds")) cfg.calibration_seeds = parse_seed_list("calibrate.seeds", raw.at("calibrate.seeds"));
    if (r.has("sweep.budgets")) cfg.budgets = parse_real_list("sweep.budgets", raw.at("sweep.budgets"));
    for (double b : cfg.budgets) {
        if (!(b > 0.0 && b <= 1.0)) {
            throw Error(Errc::TypeError, fmt::format("line {}: sweep budgets must lie in (0,1]", raw.at("sweep.budgets").line));
        }
    }
    r.read("entropy.layers", cfg.entropy_layers);
    r.read("entropy.baseline", cfg.entropy_baseline);
    r.read("entropy.compare", cfg.entropy_compare);

    if (policy_order.empty()) cfg.policies = default_policies();
    for (const auto& name : policy_order) {
        const std::string pre = "policy." + name + ".";
        PolicyConfig p;
        p.name = name;
        const std::string kind = r.get<std::string>(pre + "kind").value_or(name);
        const auto parsed = parse_policy_kind(kind);
        if (!parsed) {
            const std::size_t line = r.has(pre + "kind") ? raw.at(pre + "kind").line : 0;
            throw Error(Errc::TypeError, fmt::format("line {}: unknown policy kind '{}' (one of full, sliding_window, "
                                                     "heavy_hitter, snapkv, retentivekv)", line, kind));
        }
        p.kind = *parsed;
        if (p.kind == PolicyKind::FullCache) p.budget.fraction = 1.0;
        else p.budget.fraction = 0.2;
        r.read(pre + "budget", p.budget.fraction);
        if (!(p.budget.fraction > 0.0 && p.budget.fraction <= 1.0)) {
            throw Error(Errc::TypeError, fmt::format("line {}: budget must lie in (0,1]", raw.at(pre + "budget").line));
        }
        if (auto v = r.get<std::size_t>(pre + "window")) p.window = *v;
        r.read(pre + "sinks", p.sinks);
        r.read(pre + "snap_window", p.snap_window);
        r.read(pre + "pool", p.pool);
        r.read(pre + "lambda", p.lambda);
        r.read(pre + "tau_quantile", p.tau_quantile);
        if (auto v = r.get<double>(pre + "tau_absolute")) p.tau_absolute = *v;
        r.read(pre + "gate_w", p.gate.w_r);
        r.read(pre + "gate_b", p.gate.b_r);
        r.read(pre + "em", p.ablation.entropy_metric);
        r.read(pre + "ma", p.ablation.modality_states);
        r.read(pre + "qr", p.ablation.query_retrieval);
        if (auto v = r.get<double>(pre + "entropy_cut")) p.entropy_cut = *v;
        if (auto v = r.get<std::string>(pre + "fuse")) {
            if (*v == "gated") p.fuse = FuseMode::Gated;
            else if (*v == "unit") p.fuse = FuseMode::Unit;
            else throw Error(Errc::TypeError, fmt::format("line {}: fuse must be 'gated' or 'unit'", raw.at(pre + "fuse").line));
        }
        if (r.get<bool>(pre + "gate_auto").value_or(false)) cfg.auto_gate.push_back(name);
        cfg.policies.push_back(p);
    }
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path, bool seed_overridden = false) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoError, fmt::format("cannot open config '{}'", path));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), seed_overridden);
}

/// Canonical text form; parse_config_text(to_ini(c)) reproduces c exactly.
inline std::string to_ini(const ExperimentConfig& c) {
    auto real = [](double x) { return fmt::format("{:.17g}", x); };
    auto join_seeds = [](const std::vector<std::uint64_t>& s) {
        std::string out;
        for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
        return out;
    };
    std::string out;
    out += "seeds = " + join_seeds(c.seeds) + "\n\n[workload]\n";
    const auto& w = c.workload;
    out += fmt::format("d = {}\ngrid_rows = {}\ngrid_cols = {}\nimages = {}\ntext_len = {}\ndecode_steps = {}\n", w.d,
                       w.grid_rows, w.grid_cols, w.images, w.text_len, w.decode_steps);
    out += fmt::format("planted = {}\ndefer_until = {}\nseed = {}\nquery_scale = {}\nsalient_per_image = {}\n", w.planted,
                       w.defer_until, w.seed, real(w.query_scale), w.salient_per_image);
    out += fmt::format("background_bias = {}\ntext_bias = {}\nlate_alignment = {}\n", real(w.background_bias),
                       real(w.text_bias), real(w.late_alignment));
    out += "\n[sweep]\nbudgets = ";
    for (std::size_t i = 0; i < c.budgets.size(); ++i) out += (i ? "," : "") + real(c.budgets[i]);
    out += fmt::format("\n\n[entropy]\nlayers = {}\nbaseline = {}\ncompare = {}\n", c.entropy_layers, c.entropy_baseline,
                       c.entropy_compare);
    out += "\n[calibrate]\nseeds = " + join_seeds(c.calibration_seeds) + "\n";
    for (const auto& p : c.policies) {
        out += fmt::format("\n[policy.{}]\nkind = {}\nbudget = {}\n", p.name, to_string(p.kind), real(p.budget.fraction));
        if (p.window) out += fmt::format("window = {}\n", *p.window);
        out += fmt::format("sinks = {}\nsnap_window = {}\npool = {}\nlambda = {}\ntau_quantile = {}\n", p.sinks,
                           p.snap_window, p.pool, real(p.lambda), real(p.tau_quantile));
        if (p.tau_absolute) out += fmt::format("tau_absolute = {}\n", real(*p.tau_absolute));
        out += fmt::format("gate_w = {}\ngate_b = {}\ngate_auto = {}\n", real(p.gate.w_r), real(p.gate.b_r),
                           c.has_auto_gate(p.name) ? "true" : "false");
        out += fmt::format("em = {}\nma = {}\nqr = {}\n", p.ablation.entropy_metric, p.ablation.modality_states,
                           p.ablation.query_retrieval);
        if (p.entropy_cut) out += fmt::format("entropy_cut = {}\n", real(*p.entropy_cut));
        out += fmt::format("fuse = {}\n", p.fuse == FuseMode::Gated ? "gated" : "unit");
    }
    return out;
}

}  // namespace rkv
