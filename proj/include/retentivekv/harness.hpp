// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "retentivekv/error.hpp"
#include "retentivekv/kv_cache.hpp"
#include "retentivekv/numerics.hpp"
#include "retentivekv/policies.hpp"
#include "retentivekv/retrieval.hpp"

namespace rkv {

/// Synthetic multimodal workload. Images come first in the prompt, then text; every text
/// prompt token and every decode step carries a query.
struct WorkloadConfig {
    std::size_t d = 32;
    std::size_t grid_rows = 4;
    std::size_t grid_cols = 4;
    std::size_t images = 6;
    std::size_t text_len = 24;
    std::size_t decode_steps = 32;
    std::size_t planted = 4;
    std::size_t defer_until = 16;
    std::uint64_t seed = 0;
    // Shape of the synthetic geometry.
    double query_scale = 10.0;  // query norm in units of sqrt(d)
    std::size_t salient_per_image = 1;
    double background_bias = 0.5;
    double text_bias = 0.5;
    double late_alignment = 0.95;

    std::size_t visual_tokens() const noexcept { return images * grid_rows * grid_cols; }
    std::size_t prompt_len() const noexcept { return visual_tokens() + text_len; }
    std::size_t total_len() const noexcept { return prompt_len() + decode_steps; }

    void validate() const {
        if (d < 2) throw Error(Errc::InvalidArgument, "workload.d must be >= 2");
        if (grid_rows == 0 || grid_cols == 0) throw Error(Errc::InvalidArgument, "workload grid must be nonempty");
        if (decode_steps == 0) throw Error(Errc::InvalidArgument, "workload.decode_steps must be >= 1");
        if (defer_until >= decode_steps) throw Error(Errc::InvalidArgument, "workload.defer_until must be < decode_steps");
        if (planted > visual_tokens()) throw Error(Errc::InvalidArgument, "more planted tokens than visual tokens");
        if (planted > 0 && planted > d - 1) throw Error(Errc::InfeasiblePlanting, "planted must be <= d - 1");
        if (images > 0 && salient_per_image == 0) throw Error(Errc::InvalidArgument, "salient_per_image must be >= 1");
        if (salient_per_image > grid_rows * grid_cols) throw Error(Errc::InvalidArgument, "too many salient patches");
        if (planted > images * (grid_rows * grid_cols - salient_per_image)) {
            throw Error(Errc::InfeasiblePlanting, "not enough non-salient patches to plant into");
        }
        if (!(query_scale > 0.0)) throw Error(Errc::InvalidArgument, "workload.query_scale must be > 0");
        auto unit_interval = [](double x) { return x >= 0.0 && x < 1.0; };
        if (!unit_interval(background_bias) || !unit_interval(text_bias)) {
            throw Error(Errc::InvalidArgument, "workload biases must lie in [0,1)");
        }
        if (!(late_alignment >= 0.9 && late_alignment <= 1.0)) {
            throw Error(Errc::InvalidArgument, "workload.late_alignment must lie in [0.9,1]");
        }
    }
};

struct PromptToken {
    KVEntry entry;
    std::optional<Vector> query;
};

struct Episode {
    WorkloadConfig config;
    std::vector<PromptToken> prompt;
    std::vector<KVEntry> decode_tokens;
    std::vector<Vector> queries;  // one per decode step
    std::set<std::uint64_t> planted_ids;
    std::set<std::uint64_t> salient_ids;
};

namespace detail {

inline Vector normalized(Vector v) {
    const double n = l2_norm(v);
    if (n < 1e-12) throw Error(Errc::DegenerateNorm, "cannot normalize a near-zero vector");
    for (auto& x : v) x /= n;
    return v;
}

inline void axpy(Vector& y, double a, std::span<const double> x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

/// Orthonormal basis for a set of vectors (modified Gram-Schmidt).
class Subspace {
public:
    void add(std::span<const double> v) {
        Vector r(v.begin(), v.end());
        for (const auto& b : m_basis) axpy(r, -dot(r, b), b);
        const double n = l2_norm(r);
        if (n < 1e-9) throw Error(Errc::InfeasiblePlanting, "planted keys are linearly dependent");
        for (auto& x : r) x /= n;
        m_basis.push_back(std::move(r));
    }

    Vector project_out(Vector x) const {
        for (const auto& b : m_basis) axpy(x, -dot(x, b), b);
        return x;
    }

private:
    std::vector<Vector> m_basis;
};

/// Index of the context key with the largest inner product with q (ties: earliest).
inline std::size_t argmax_key(std::span<const double> q, std::span<const KVEntry* const> context) {
    std::size_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < context.size(); ++i) {
        const double v = dot(q, context[i]->key);
        if (v > best_v) {
            best_v = v;
            best = i;
        }
    }
    return best;
}

}  // namespace detail

/// Draws an episode whose planted patches are invisible to early queries and become the
/// best-matching keys for queries from `defer_until` on. The guarantee is verified causally;
/// a violating query is redrawn up to 64 times before InfeasiblePlanting is raised.
inline Episode generate(const WorkloadConfig& cfg) {
    cfg.validate();
    RngStream rng(cfg.seed);
    const std::size_t d = cfg.d;
    const double qnorm = cfg.query_scale * std::sqrt(static_cast<double>(d));
    const Vector prompt_dir = rng.unit_vector(d);

    auto biased_key = [&](double sign, double mag) {
        Vector r = rng.unit_vector(d);
        detail::axpy(r, -dot(r, prompt_dir), prompt_dir);
        r = detail::normalized(std::move(r));
        Vector k(d, 0.0);
        detail::axpy(k, sign * mag, prompt_dir);
        detail::axpy(k, std::sqrt(1.0 - mag * mag), r);
        return detail::normalized(std::move(k));
    };

    Episode ep;
    ep.config = cfg;
    const std::size_t cells = cfg.grid_rows * cfg.grid_cols;
    std::uint64_t next_id = 0;
    std::vector<std::vector<std::size_t>> salient_cells(cfg.images);
    for (std::size_t im = 0; im < cfg.images; ++im) {
        std::vector<std::size_t> order(cells);
        for (std::size_t c = 0; c < cells; ++c) order[c] = c;
        rng.shuffle(order);
        salient_cells[im].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.salient_per_image));
        std::sort(salient_cells[im].begin(), salient_cells[im].end());
        for (std::size_t y = 0; y < cfg.grid_rows; ++y) {
            for (std::size_t x = 0; x < cfg.grid_cols; ++x) {
                KVEntry e;
                e.meta = TokenMeta::visual(next_id, next_id, static_cast<std::uint32_t>(im),
                                           GridPos{static_cast<int>(x), static_cast<int>(y)});
                e.key = biased_key(-1.0, cfg.background_bias);
                e.value = rng.unit_vector(d);
                ep.prompt.push_back({std::move(e), std::nullopt});
                ++next_id;
            }
        }
    }
    for (std::size_t i = 0; i < cfg.text_len; ++i) {
        KVEntry e;
        e.meta = TokenMeta::text(next_id, next_id);
        e.key = biased_key(1.0, cfg.text_bias);
        e.value = rng.unit_vector(d);
        ep.prompt.push_back({std::move(e), std::nullopt});
        ++next_id;
    }

    auto patch_index = [&](std::size_t im, std::size_t cell) { return im * cells + cell; };
    std::vector<std::size_t> salient;
    for (std::size_t im = 0; im < cfg.images; ++im) {
        for (std::size_t c : salient_cells[im]) salient.push_back(patch_index(im, c));
    }
    const std::set<std::size_t> salient_set(salient.begin(), salient.end());

    // Planted patches sit next to salient ones; fall back to any other non-salient patch.
    std::vector<std::size_t> near;
    std::set<std::size_t> seen;
    static constexpr int kNeighbours[8][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
    for (std::size_t im = 0; im < cfg.images; ++im) {
        for (std::size_t c : salient_cells[im]) {
            const int cx = static_cast<int>(c % cfg.grid_cols);
            const int cy = static_cast<int>(c / cfg.grid_cols);
            for (const auto& off : kNeighbours) {
                const int x = cx + off[0];
                const int y = cy + off[1];
                if (x < 0 || y < 0 || x >= static_cast<int>(cfg.grid_cols) || y >= static_cast<int>(cfg.grid_rows)) {
                    continue;
                }
                const std::size_t idx = patch_index(im, static_cast<std::size_t>(y) * cfg.grid_cols + x);
                if (salient_set.count(idx) == 0 && seen.insert(idx).second) near.push_back(idx);
            }
        }
    }
    rng.shuffle(near);
    if (near.size() < cfg.planted) {
        std::vector<std::size_t> far;
        for (std::size_t i = 0; i < cfg.visual_tokens(); ++i) {
            if (salient_set.count(i) == 0 && seen.count(i) == 0) far.push_back(i);
        }
        rng.shuffle(far);
        near.insert(near.end(), far.begin(), far.end());
    }
    const std::vector<std::size_t> planted(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(cfg.planted));

    detail::Subspace span_planted;
    for (std::size_t p : planted) {
        ep.prompt[p].entry.key = biased_key(1.0, 0.0);
        span_planted.add(ep.prompt[p].entry.key);
        ep.planted_ids.insert(ep.prompt[p].entry.id());
    }
    for (std::size_t s : salient) {
        ep.prompt[s].entry.key = biased_key(1.0, 0.0);
        ep.salient_ids.insert(ep.prompt[s].entry.id());
    }

    auto early_query = [&] {
        Vector q(d, 0.0);
        detail::axpy(q, 0.6, prompt_dir);
        if (!salient.empty()) detail::axpy(q, 0.6, ep.prompt[salient[rng.below(salient.size())]].entry.key);
        detail::axpy(q, 0.5, rng.unit_vector(d));
        q = detail::normalized(span_planted.project_out(std::move(q)));
        for (auto& x : q) x *= qnorm;
        return q;
    };
    auto late_query = [&] {
        const std::size_t p = planted[rng.below(planted.size())];
        const Vector noise = detail::normalized(span_planted.project_out(rng.gaussian(d)));
        Vector q(d, 0.0);
        detail::axpy(q, cfg.late_alignment, ep.prompt[p].entry.key);
        detail::axpy(q, std::sqrt(1.0 - cfg.late_alignment * cfg.late_alignment), noise);
        q = detail::normalized(std::move(q));
        for (auto& x : q) x *= qnorm;
        return q;
    };

    std::vector<const KVEntry*> context;
    for (const auto& t : ep.prompt) context.push_back(&t.entry);
    auto planted_wins = [&](std::span<const double> q, std::size_t ctx_len) {
        const auto idx = detail::argmax_key(q, std::span<const KVEntry* const>(context.data(), ctx_len));
        return ep.planted_ids.count(context[idx]->id()) != 0;
    };
    constexpr int kMaxRedraws = 64;

    for (std::size_t i = cfg.visual_tokens(); i < ep.prompt.size(); ++i) {
        Vector q = early_query();
        for (int tries = 0; !ep.planted_ids.empty() && planted_wins(q, i + 1); ++tries) {
            if (tries == kMaxRedraws) throw Error(Errc::InfeasiblePlanting, "early prompt query keeps hitting planted keys");
            q = early_query();
        }
        ep.prompt[i].query = std::move(q);
    }

    ep.decode_tokens.reserve(cfg.decode_steps);  // keeps `context` pointers valid
    for (std::size_t t = 0; t < cfg.decode_steps; ++t) {
        KVEntry e;
        e.meta = TokenMeta::text(next_id, next_id);
        e.key = biased_key(1.0, cfg.text_bias);
        e.value = rng.unit_vector(d);
        ++next_id;
        ep.decode_tokens.push_back(std::move(e));
        context.push_back(&ep.decode_tokens.back());

        const bool late = !planted.empty() && t >= cfg.defer_until;
        auto draw = [&] { return late ? late_query() : early_query(); };
        Vector q = draw();
        if (!planted.empty()) {
            for (int tries = 0; planted_wins(q, context.size()) != late; ++tries) {
                if (tries == kMaxRedraws) throw Error(Errc::InfeasiblePlanting, "cannot satisfy the planting guarantee");
                q = draw();
            }
        }
        ep.queries.push_back(std::move(q));
    }
    return ep;
}

/// Checks the planting guarantee against an already generated episode.
inline bool verify_planting(const Episode& ep) {
    if (ep.planted_ids.empty()) return true;
    std::vector<const KVEntry*> context;
    for (const auto& t : ep.prompt) {
        context.push_back(&t.entry);
        if (t.query && ep.planted_ids.count(context[detail::argmax_key(*t.query, context)]->id()) != 0) return false;
    }
    for (std::size_t t = 0; t < ep.decode_tokens.size(); ++t) {
        context.push_back(&ep.decode_tokens[t]);
        const bool hit = ep.planted_ids.count(context[detail::argmax_key(ep.queries[t], context)]->id()) != 0;
        if (hit != (t >= ep.config.defer_until)) return false;
    }
    return true;
}

struct StepTrace {
    std::size_t step = 0;
    std::size_t kept = 0;
    std::size_t evicted = 0;
    std::size_t absorbed = 0;
    std::size_t dropped = 0;
    double recon_err = 0.0;
    double entropy_total = 0.0;
    std::uint64_t flops = 0;
};

struct EpisodeMetrics {
    std::string policy;
    std::uint64_t seed = 0;
    double recon_error = 0.0;
    double retained_fraction = 1.0;
    std::size_t state_count = 0;
    std::size_t state_bytes = 0;
    bool state_count_constant = true;
    std::uint64_t total_flops = 0;
    std::size_t peak_cache_bytes = 0;  // discrete cache plus continuous states, post eviction
    std::vector<double> entropy_totals;  // per decode step
    std::vector<StepTrace> trace;
    std::vector<Vector> outputs;  // filled when RunOptions::keep_outputs
};

struct RunOptions {
    bool compute_oracle = true;
    bool keep_outputs = false;
    /// Called after every decode step with the policy outcome and the oracle output.
    std::function<void(std::size_t, const StepOutcome&, const Vector&)> observer;
};

inline double mean_entropy(const EpisodeMetrics& m) {
    if (m.entropy_totals.empty()) return 0.0;
    double s = 0.0;
    for (double h : m.entropy_totals) s += h;
    return s / static_cast<double>(m.entropy_totals.size());
}

inline EpisodeMetrics run_episode(const PolicyConfig& policy, const Episode& ep, const RunOptions& opts = {}) {
    const std::size_t d = ep.config.d;
    PolicyRunner runner(policy, d);
    std::optional<PolicyRunner> oracle;
    if (opts.compute_oracle) oracle.emplace(PolicyConfig{}, d);

    for (const auto& t : ep.prompt) {
        runner.prefill(t.entry, t.query);
        if (oracle) oracle->prefill(t.entry, t.query);
    }

    EpisodeMetrics m;
    m.policy = policy.name;
    m.seed = ep.config.seed;
    double err_sum = 0.0;
    std::optional<std::size_t> first_state_count;
    for (std::size_t t = 0; t < ep.decode_tokens.size(); ++t) {
        const StepOutcome out = runner.decode(ep.decode_tokens[t], ep.queries[t], t);
        Vector oracle_out;
        double err = 0.0;
        if (oracle) {
            oracle_out = oracle->decode(ep.decode_tokens[t], ep.queries[t], t).output;
            err = l2_distance(out.output, oracle_out);
        }
        err_sum += err;
        if (opts.observer) opts.observer(t, out, oracle_out);
        if (!first_state_count) first_state_count = runner.state_count();
        if (runner.state_count() != *first_state_count) m.state_count_constant = false;
        m.total_flops += out.flops;
        m.peak_cache_bytes = std::max(m.peak_cache_bytes, runner.cache_bytes() + runner.state_bytes());
        m.entropy_totals.push_back(out.entropy_total);
        m.trace.push_back({t, out.kept, out.evicted_count, out.absorbed_count, out.dropped_count, err,
                           out.entropy_total, out.flops});
        if (opts.keep_outputs) m.outputs.push_back(out.output);
    }
    m.recon_error = ep.decode_tokens.empty() ? 0.0 : err_sum / static_cast<double>(ep.decode_tokens.size());
    m.retained_fraction = static_cast<double>(runner.cache().size()) / static_cast<double>(runner.tokens_seen());
    m.state_count = runner.state_count();
    m.state_bytes = runner.state_bytes();
    return m;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; results keep index order.
template <typename R, typename Fn>
std::vector<R> parallel_map(std::size_t n, std::size_t jobs, Fn fn) {
    std::vector<R> out(n);
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    out[i] = fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

/// Episode seed for the s-th entry of a seed list.
inline WorkloadConfig with_episode_seed(WorkloadConfig cfg, std::uint64_t s) {
    cfg.seed = derive_seed(cfg.seed, s);
    return cfg;
}

struct Stats {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation
};

inline Stats stats(std::span<const double> xs) {
    Stats s;
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    for (double x : xs) s.stddev += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(xs.size()));
    return s;
}

struct EntropyShiftRow {
    std::size_t layer = 0;
    double mean_a = 0.0;
    double mean_b = 0.0;
    double delta = 0.0;  // mean_b - mean_a
};

/// Each simulated layer is an independent episode drawn with a layer-derived seed.
inline std::vector<EntropyShiftRow> entropy_shift_report(const WorkloadConfig& workload, const PolicyConfig& a,
                                                         const PolicyConfig& b, std::size_t layers,
                                                         std::span<const std::uint64_t> seeds, std::size_t jobs = 1) {
    struct Cell {
        double a = 0.0;
        double b = 0.0;
    };
    const std::size_t n = layers * seeds.size();
    const auto cells = parallel_map<Cell>(n, jobs, [&](std::size_t i) {
        const std::size_t layer = i / seeds.size();
        WorkloadConfig cfg = with_episode_seed(workload, seeds[i % seeds.size()]);
        cfg.seed = derive_seed(cfg.seed, 1000 + layer);
        const Episode ep = generate(cfg);
        RunOptions opts;
        opts.compute_oracle = false;
        return Cell{mean_entropy(run_episode(a, ep, opts)), mean_entropy(run_episode(b, ep, opts))};
    });
    std::vector<EntropyShiftRow> rows;
    for (std::size_t l = 0; l < layers; ++l) {
        EntropyShiftRow r{l, 0.0, 0.0, 0.0};
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            r.mean_a += cells[l * seeds.size() + s].a;
            r.mean_b += cells[l * seeds.size() + s].b;
        }
        if (!seeds.empty()) {
            r.mean_a /= static_cast<double>(seeds.size());
            r.mean_b /= static_cast<double>(seeds.size());
        }
        r.delta = r.mean_b - r.mean_a;
        rows.push_back(r);
    }
    return rows;
}

struct SweepRow {
    std::string policy;
    double budget = 1.0;
    Stats recon;
    double retained_fraction = 0.0;
    double mean_flops = 0.0;
    double mean_peak_bytes = 0.0;
    std::size_t state_count = 0;
    std::size_t monotonicity_violations = 0;
    std::vector<EpisodeMetrics> episodes;  // sorted by seed-list position
};

inline PolicyConfig with_budget(PolicyConfig p, double budget) {
    p.budget.fraction = budget;
    return p;
}

/// Mean and spread of recon_error per (policy, budget). For each policy, violations counts seed-level
/// increases of error between consecutive (ascending) budgets and is reported on every row of that policy.
inline std::vector<SweepRow> budget_sweep(std::span<const PolicyConfig> policies, std::span<const double> budgets,
                                          const WorkloadConfig& workload, std::span<const std::uint64_t> seeds,
                                          std::size_t jobs = 1) {
    for (double b : budgets) {
        if (!(b > 0.0 && b <= 1.0)) throw Error(Errc::OutOfRange, "sweep budgets must lie in (0,1]");
    }
    const auto episodes = parallel_map<Episode>(seeds.size(), jobs,
                                                [&](std::size_t i) { return generate(with_episode_seed(workload, seeds[i])); });
    const std::size_t per_policy = budgets.size() * seeds.size();
    const auto metrics = parallel_map<EpisodeMetrics>(policies.size() * per_policy, jobs, [&](std::size_t i) {
        const std::size_t p = i / per_policy;
        const std::size_t b = (i % per_policy) / seeds.size();
        const std::size_t s = i % seeds.size();
        return run_episode(with_budget(policies[p], budgets[b]), episodes[s]);
    });

    std::vector<SweepRow> rows;
    for (std::size_t p = 0; p < policies.size(); ++p) {
        std::size_t violations = 0;
        std::vector<std::size_t> order(budgets.size());
        for (std::size_t b = 0; b < order.size(); ++b) order[b] = b;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return budgets[x] < budgets[y]; });
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            for (std::size_t j = 1; j < order.size(); ++j) {
                const auto& lo = metrics[p * per_policy + order[j - 1] * seeds.size() + s];
                const auto& hi = metrics[p * per_policy + order[j] * seeds.size() + s];
                if (hi.recon_error > lo.recon_error) ++violations;
            }
        }
        for (std::size_t b = 0; b < budgets.size(); ++b) {
            SweepRow row;
            row.policy = policies[p].name;
            row.budget = budgets[b];
            std::vector<double> errs;
            for (std::size_t s = 0; s < seeds.size(); ++s) {
                const auto& m = metrics[p * per_policy + b * seeds.size() + s];
                errs.push_back(m.recon_error);
                row.retained_fraction += m.retained_fraction;
                row.mean_flops += static_cast<double>(m.total_flops);
                row.mean_peak_bytes += static_cast<double>(m.peak_cache_bytes);
                row.state_count = m.state_count;
                row.episodes.push_back(m);
            }
            const double n = static_cast<double>(std::max<std::size_t>(1, seeds.size()));
            row.retained_fraction /= n;
            row.mean_flops /= n;
            row.mean_peak_bytes /= n;
            row.recon = stats(errs);
            row.monotonicity_violations = violations;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

struct AblationRow {
    std::string label;
    Ablation flags;
    Stats recon;
    std::vector<double> per_seed;
};

inline std::vector<std::pair<std::string, Ablation>> ablation_combinations() {
    return {{"EM+MA", {true, true, false}},
            {"EM+QR", {true, false, true}},
            {"MA+QR", {false, true, true}},
            {"EM+MA+QR", {true, true, true}}};
}

inline std::vector<AblationRow> ablation_run(const PolicyConfig& base, const WorkloadConfig& workload,
                                             std::span<const std::uint64_t> seeds, std::size_t jobs = 1) {
    const auto combos = ablation_combinations();
    const auto episodes = parallel_map<Episode>(seeds.size(), jobs,
                                                [&](std::size_t i) { return generate(with_episode_seed(workload, seeds[i])); });
    const auto errs = parallel_map<double>(combos.size() * seeds.size(), jobs, [&](std::size_t i) {
        PolicyConfig p = base;
        p.kind = PolicyKind::RetentiveKV;
        p.ablation = combos[i / seeds.size()].second;
        return run_episode(p, episodes[i % seeds.size()]).recon_error;
    });
    std::vector<AblationRow> rows;
    for (std::size_t c = 0; c < combos.size(); ++c) {
        AblationRow r{combos[c].first, combos[c].second, {}, {}};
        r.per_seed.assign(errs.begin() + static_cast<std::ptrdiff_t>(c * seeds.size()),
                          errs.begin() + static_cast<std::ptrdiff_t>((c + 1) * seeds.size()));
        r.recon = stats(r.per_seed);
        rows.push_back(std::move(r));
    }
    return rows;
}

struct GateFit {
    GateParams params;
    bool degenerate = false;
    std::size_t samples = 0;
};

inline constexpr double kGateClampLo = 0.01;
inline constexpr double kGateClampHi = 0.99;

/// Ordinary least squares of logit(clamped gate target) on h. Degenerate inputs return defaults.
inline GateFit fit_gate(std::span<const double> h, std::span<const double> target_gate) {
    if (h.size() != target_gate.size()) throw Error(Errc::ShapeMismatch, "fit_gate input lengths differ");
    GateFit fit;
    fit.samples = h.size();
    if (h.empty() || std::all_of(h.begin(), h.end(), [&](double x) { return x == h.front(); })) {
        fit.degenerate = true;
        return fit;
    }
    const double n = static_cast<double>(h.size());
    double mx = 0.0;
    double my = 0.0;
    std::vector<double> y(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double g = std::clamp(target_gate[i], kGateClampLo, kGateClampHi);
        y[i] = std::log(g / (1.0 - g));
        mx += h[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        sxx += (h[i] - mx) * (h[i] - mx);
        sxy += (h[i] - mx) * (y[i] - my);
    }
    fit.params.w_r = sxy / sxx;
    fit.params.b_r = my - fit.params.w_r * mx;
    return fit;
}

/// Fits the retrieval gate on calibration episodes. At each step where the memory readout is
/// nonzero, the ideal gate is the least-squares coefficient of o_s against the oracle residual.
inline GateFit calibrate_gate(const PolicyConfig& policy, const WorkloadConfig& workload,
                              std::span<const std::uint64_t> seeds) {
    if (seeds.empty()) throw Error(Errc::InvalidArgument, "calibrate_gate needs at least one seed");
    std::vector<double> hs;
    std::vector<double> gs;
    PolicyConfig p = policy;
    p.kind = PolicyKind::RetentiveKV;
    for (std::uint64_t s : seeds) {
        const Episode ep = generate(with_episode_seed(workload, s));
        RunOptions opts;
        opts.observer = [&](std::size_t, const StepOutcome& out, const Vector& oracle) {
            if (!out.retrieved) return;
            const Vector& o = out.retrieved->o_s;
            const double nn = dot(o, o);
            if (nn == 0.0) return;
            double num = 0.0;
            for (std::size_t j = 0; j < o.size(); ++j) num += (oracle[j] - out.local_output[j]) * o[j];
            hs.push_back(out.entropy_total);
            gs.push_back(num / nn);
        };
        run_episode(p, ep, opts);
    }
    return fit_gate(hs, gs);
}

}  // namespace rkv
