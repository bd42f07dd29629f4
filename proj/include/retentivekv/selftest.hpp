// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "retentivekv/harness.hpp"
#include "retentivekv/numerics.hpp"
#include "retentivekv/policies.hpp"
#include "retentivekv/retention.hpp"
#include "retentivekv/state_space.hpp"

namespace rkv {

struct SelftestOptions {
    /// When set, the recurrent side of the dual-form suite decays with this factor instead
    /// of the nominal one. Used to prove the suite catches a broken recurrence.
    std::optional<double> corrupt_decay;
};

struct SuiteResult {
    std::string name;
    std::size_t passed = 0;
    std::size_t total = 0;
    bool ok() const noexcept { return passed == total; }
};

namespace selftest_detail {

inline SuiteResult dual_form(const SelftestOptions& opts) {
    SuiteResult r{"dual_form", 0, 0};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        RngStream rng(derive_seed(0x5e1f, seed));
        const std::size_t d = 2 + rng.below(3) * 2;
        const std::size_t len = 1 + rng.below(16);
        const double gamma = 0.5 + 0.5 * rng.uniform();
        std::vector<KVPair> pairs;
        StateMatrix s = StateMatrix::recall(d);
        for (std::size_t i = 0; i < len; ++i) {
            pairs.push_back({rng.gaussian(d), rng.gaussian(d)});
            if (opts.corrupt_decay) {
                decay_and_inject(s.S, *opts.corrupt_decay, 1.0, pairs.back().k, pairs.back().v);
            } else {
                plain_update(s, pairs.back().k, pairs.back().v, gamma);
            }
        }
        ++r.total;
        if (max_abs_diff(s.S, explicit_sum_oracle(pairs, gamma)) <= 1e-9) ++r.passed;
    }
    return r;
}

inline SuiteResult entropy_brute_force() {
    SuiteResult r{"entropy_brute_force", 0, 0};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        RngStream rng(derive_seed(0xe7, seed));
        const std::size_t n = 2 + rng.below(20);
        std::vector<double> w(n);
        std::vector<bool> mask(n);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = rng.uniform() + 1e-3;
            sum += w[i];
            mask[i] = i == 0 || rng.uniform() < 0.6;
        }
        for (auto& x : w) x /= sum;
        // Direct Shannon entropy of the visual slice: H = ln(m) - (1/m) sum w ln w.
        double m = 0.0;
        double wlogw = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            m += w[i];
            wlogw += w[i] * std::log(w[i]);
        }
        const double direct = std::log(m) - wlogw / m;
        ++r.total;
        if (std::abs(cross_modal_entropy(w, mask, 0).total - direct) <= 1e-12) ++r.passed;
    }
    return r;
}

inline SuiteResult budget_proportionality() {
    SuiteResult r{"budget_proportionality", 0, 0};
    WorkloadConfig w;
    w.d = 8;
    w.images = 2;
    w.grid_rows = 3;
    w.grid_cols = 3;
    w.text_len = 8;
    w.decode_steps = 24;
    w.planted = 2;
    w.defer_until = 12;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        w.seed = seed;
        const Episode ep = generate(w);
        for (auto kind : {PolicyKind::HeavyHitter, PolicyKind::RetentiveKV}) {
            for (double b : {0.1, 0.3, 0.6}) {
                PolicyConfig p;
                p.kind = kind;
                p.name = std::string(to_string(kind));
                p.budget.fraction = b;
                const EpisodeMetrics m = run_episode(p, ep);
                bool ok = m.state_count_constant;
                std::size_t seen = ep.prompt.size();
                for (const auto& s : m.trace) {
                    ++seen;
                    ok = ok && s.kept <= p.budget.keep_count(seen) && s.evicted == s.absorbed + s.dropped;
                }
                const std::size_t expected = p.budget.keep_count(seen) * Cache::entry_bytes(w.d) + m.state_bytes;
                const std::size_t diff = m.peak_cache_bytes > expected ? m.peak_cache_bytes - expected
                                                                       : expected - m.peak_cache_bytes;
                ok = ok && diff <= Cache::entry_bytes(w.d);
                ++r.total;
                if (ok) ++r.passed;
            }
        }
    }
    return r;
}

}  // namespace selftest_detail

/// Runs the invariant suites, printing one line per suite. Returns the process exit status.
inline int run_selftest(std::ostream& out, const SelftestOptions& opts = {}) {
    std::vector<SuiteResult> results;
    auto guarded = [&](const std::string& name, const std::function<SuiteResult()>& fn) {
        try {
            results.push_back(fn());
        } catch (const std::exception& e) {
            out << fmt::format("suite {}: error: {}\n", name, e.what());
            results.push_back({name, 0, 1});
        }
    };
    guarded("dual_form", [&] { return selftest_detail::dual_form(opts); });
    guarded("entropy_brute_force", [] { return selftest_detail::entropy_brute_force(); });
    guarded("budget_proportionality", [] { return selftest_detail::budget_proportionality(); });
    bool ok = true;
    for (const auto& r : results) {
        out << fmt::format("suite {}: {}/{} passed{}\n", r.name, r.passed, r.total, r.ok() ? "" : "  FAILED");
        ok = ok && r.ok();
    }
    out << fmt::format("{} suites, {}\n", results.size(), ok ? "all passed" : "FAILURES");
    return ok ? 0 : 1;
}

}  // namespace rkv
