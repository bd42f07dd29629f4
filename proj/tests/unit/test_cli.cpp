// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "retentivekv/config.hpp"
#include "retentivekv/report.hpp"
#include "retentivekv/selftest.hpp"

using namespace rkv;

namespace {

Error error_of(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const Error& e) {
        return e;
    }
    ADD_FAILURE() << "expected an rkv::Error";
    return Error(Errc::InvalidArgument, "");
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("retentivekv_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST(Config, MinimalFileGetsDefaults) {
    const auto c = parse_config_text("[workload]\nd = 16\nseed = 3\n");
    EXPECT_EQ(c.workload.d, 16u);
    EXPECT_EQ(c.workload.seed, 3u);
    EXPECT_EQ(c.workload.images, WorkloadConfig{}.images);
    EXPECT_EQ(c.budgets, (std::vector<double>{0.05, 0.2, 0.35, 0.5}));
    ASSERT_EQ(c.policies.size(), 5u);
    EXPECT_EQ(c.policies[0].kind, PolicyKind::FullCache);
    EXPECT_EQ(c.policies[0].budget.fraction, 1.0);
    EXPECT_EQ(c.policy("heavy_hitter").budget.fraction, 0.2);
}

TEST(Config, DottedKeysAndComments) {
    const auto c = parse_config_text("# comment\nworkload.d = 8\nworkload.seed = 1\nseeds = 0..2, 7\n");
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2, 7}));
}

TEST(Config, PolicySections) {
    const auto c = parse_config_text(
        "[workload]\nd = 8\nseed = 1\n[policy.rkv]\nkind = retentivekv\nbudget = 0.3\nlambda = 0.7\nma = false\n"
        "gate_auto = true\nfuse = unit\n[policy.hh]\nkind = heavy_hitter\n");
    ASSERT_EQ(c.policies.size(), 2u);
    const auto& p = c.policy("rkv");
    EXPECT_EQ(p.kind, PolicyKind::RetentiveKV);
    EXPECT_EQ(p.budget.fraction, 0.3);
    EXPECT_EQ(p.lambda, 0.7);
    EXPECT_FALSE(p.ablation.modality_states);
    EXPECT_EQ(p.fuse, FuseMode::Unit);
    EXPECT_TRUE(c.has_auto_gate("rkv"));
    EXPECT_FALSE(c.has_auto_gate("hh"));
    EXPECT_EQ(c.policy("hh").budget.fraction, 0.2);
}

TEST(Config, SweepBudgets) {
    const auto c = parse_config_text("[workload]\nd = 8\nseed = 1\n[sweep]\nbudgets = 0.1, 0.25\n");
    EXPECT_EQ(c.budgets, (std::vector<double>{0.1, 0.25}));
}

TEST(Config, UnknownKeySuggestsSpelling) {
    const Error e = error_of("[workload]\nd = 8\nseed = 1\npolcy.budget = 0.2\n");
    EXPECT_EQ(e.code(), Errc::UnknownKey);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("policy.<name>.budget"), std::string::npos) << msg;

    const Error f = error_of("[workload]\nd = 8\nseed = 1\ndecode_step = 4\n");
    EXPECT_NE(std::string(f.what()).find("workload.decode_steps"), std::string::npos) << f.what();
}

TEST(Config, MissingRequiredKeys) {
    EXPECT_EQ(error_of("[workload]\nseed = 1\n").code(), Errc::MissingKey);
    EXPECT_EQ(error_of("[workload]\nd = 8\n").code(), Errc::MissingKey);
    EXPECT_NO_THROW(parse_config_text("[workload]\nd = 8\n", true));
}

TEST(Config, TypeErrorsCarryLineNumbers) {
    const Error e = error_of("[workload]\nd = eight\nseed = 1\n");
    EXPECT_EQ(e.code(), Errc::TypeError);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_EQ(error_of("[workload]\nd = 8\nseed = 1\nd = 9\n").code(), Errc::TypeError);
    EXPECT_EQ(error_of("[workload]\nd = 8\nseed = 1\n[policy.x]\nkind = lru\n").code(), Errc::TypeError);
    EXPECT_EQ(error_of("[workload]\nd = 8\nseed = 1\n[sweep]\nbudgets = 0.1, 2\n").code(), Errc::TypeError);
}

TEST(Config, CanonicalTextRoundTrips) {
    auto c = parse_config_text(
        "seeds = 3..5\n[workload]\nd = 12\nseed = 9\nquery_scale = 0.1\n[policy.r]\nkind = retentivekv\n"
        "budget = 0.35\ngate_w = 0.123456789012345\ntau_absolute = 0.4\nentropy_cut = 0.01\nwindow = 3\n");
    const std::string text = to_ini(c);
    const auto again = parse_config_text(text);
    EXPECT_EQ(to_ini(again), text);
    EXPECT_EQ(again.policy("r").gate.w_r, 0.123456789012345);
    EXPECT_EQ(again.workload.query_scale, 0.1);
    EXPECT_EQ(again.seeds, (std::vector<std::uint64_t>{3, 4, 5}));
}

TEST(Config, MissingFileIsIoError) {
    try {
        parse_config("/nonexistent/path/cfg.ini");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::IoError);
    }
}

TEST(Reports, EmitsThreeFiles) {
    Report r;
    r.command = "run";
    r.summary = {{"a", "b"}, {{"1", "2"}}};
    r.trace.push_back({{"step", 0}});
    r.config = parse_config_text("[workload]\nd = 8\nseed = 1\n");
    const auto dir = scratch("emit");
    emit_reports(r, dir);
    EXPECT_EQ(slurp(dir / "summary.csv"), "a,b\n1,2\n");
    EXPECT_EQ(slurp(dir / "trace.jsonl"), "{\"step\":0}\n");
    const std::string manifest = slurp(dir / "manifest.ini");
    EXPECT_NE(manifest.find("command = run"), std::string::npos);
    EXPECT_NE(manifest.find(std::string("version = ") + kVersion), std::string::npos);
    // The manifest is itself a valid config.
    EXPECT_EQ(to_ini(parse_config_text(manifest)), to_ini(r.config));
    std::filesystem::remove_all(dir);
}

TEST(Reports, EmptySummaryRefused) {
    Report r;
    EXPECT_THROW(emit_reports(r, scratch("empty")), Error);
}

TEST(Reports, UnwritableDirectoryIsIoError) {
    const auto file = scratch("blocker");
    { std::ofstream(file) << "x"; }
    Report r;
    r.summary = {{"a"}, {{"1"}}};
    try {
        emit_reports(r, file / "sub");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::IoError);
    }
    std::filesystem::remove_all(file);
}

TEST(Reports, SweepTableShape) {
    WorkloadConfig w;
    w.d = 8;
    w.images = 1;
    w.grid_rows = 2;
    w.grid_cols = 2;
    w.text_len = 4;
    w.decode_steps = 8;
    w.planted = 1;
    w.defer_until = 4;
    std::vector<PolicyConfig> ps;
    for (auto k : {PolicyKind::SlidingWindow, PolicyKind::HeavyHitter, PolicyKind::RetentiveKV}) {
        PolicyConfig p;
        p.kind = k;
        p.name = std::string(to_string(k));
        ps.push_back(p);
    }
    const std::vector<double> budgets = {0.05, 0.2, 0.35, 0.5};
    const std::vector<std::uint64_t> seeds = {0};
    const Table t = sweep_table(budget_sweep(ps, budgets, w, seeds), ps, 1);
    EXPECT_EQ(t.rows.size(), 12u);
    const std::string csv = to_csv(t);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "policy,kind,budget,seeds,recon_mean,recon_std,retained_fraction,mean_flops,mean_peak_cache_bytes,"
              "state_count,monotonicity_violations");
}

TEST(Selftest, PassesOnCorrectCode) {
    std::ostringstream out;
    EXPECT_EQ(run_selftest(out), 0);
    const std::string text = out.str();
    EXPECT_GE(std::count(text.begin(), text.end(), '\n'), 3);
    EXPECT_NE(text.find("all passed"), std::string::npos) << text;
}

TEST(Selftest, DetectsCorruptedDecay) {
    std::ostringstream out;
    SelftestOptions opts;
    opts.corrupt_decay = 1.5;
    EXPECT_NE(run_selftest(out, opts), 0);
    EXPECT_NE(out.str().find("dual_form"), std::string::npos) << out.str();
}
