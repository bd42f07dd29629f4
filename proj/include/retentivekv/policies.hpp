// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "retentivekv/error.hpp"
#include "retentivekv/kv_cache.hpp"
#include "retentivekv/numerics.hpp"
#include "retentivekv/retention.hpp"
#include "retentivekv/retrieval.hpp"
#include "retentivekv/state_space.hpp"

namespace rkv {

enum class PolicyKind : std::uint8_t { FullCache, SlidingWindow, HeavyHitter, SnapKV, RetentiveKV };

inline std::string_view to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::FullCache: return "full";
        case PolicyKind::SlidingWindow: return "sliding_window";
        case PolicyKind::HeavyHitter: return "heavy_hitter";
        case PolicyKind::SnapKV: return "snapkv";
        case PolicyKind::RetentiveKV: return "retentivekv";
    }
    return "unknown";
}

inline std::optional<PolicyKind> parse_policy_kind(std::string_view s) {
    for (auto k : {PolicyKind::FullCache, PolicyKind::SlidingWindow, PolicyKind::HeavyHitter, PolicyKind::SnapKV,
                   PolicyKind::RetentiveKV}) {
        if (s == to_string(k)) return k;
    }
    return std::nullopt;
}

struct Budget {
    double fraction = 1.0;

    /// ceil(fraction * length), at least 1 for a nonempty cache. A tiny slack absorbs
    /// representation error so that e.g. 0.35 * 20 keeps 7, not 8.
    std::size_t keep_count(std::size_t length) const {
        if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(Errc::OutOfRange, "budget fraction must lie in (0,1]");
        if (length == 0) return 0;
        const double raw = fraction * static_cast<double>(length);
        const auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9 * raw));
        return std::clamp<std::size_t>(k, 1, length);
    }
};

struct Ablation {
    bool entropy_metric = true;   // EM
    bool modality_states = true;  // MA
    bool query_retrieval = true;  // QR
    friend bool operator==(const Ablation&, const Ablation&) = default;
};

enum class FuseMode : std::uint8_t { Gated, Unit };

struct PolicyConfig {
    std::string name = "full";
    PolicyKind kind = PolicyKind::FullCache;
    Budget budget;
    std::optional<std::size_t> window;  // unset: derived from the budget
    std::size_t sinks = 4;
    std::size_t snap_window = 4;
    std::size_t pool = 3;
    double lambda = 0.5;
    double tau_quantile = 0.5;
    std::optional<double> tau_absolute;
    GateParams gate;
    Ablation ablation;
    std::optional<double> entropy_cut;  // unset: median of the exiting batch
    FuseMode fuse = FuseMode::Gated;
};

/// Symbolic cost model, in multiply-adds and elementwise ops.
namespace flops {
inline std::uint64_t attention(std::size_t L, std::size_t d) { return 2ULL * L * d + 5ULL * L; }
inline std::uint64_t state_update(std::size_t d) { return 2ULL * d * d; }
inline std::uint64_t retrieval(std::size_t d) { return 2ULL * d * d; }
}  // namespace flops

struct StepOutcome {
    Vector output;
    Vector local_output;
    std::optional<RetrievedOutput> retrieved;
    std::size_t evicted_count = 0;
    std::size_t absorbed_count = 0;
    std::size_t dropped_count = 0;
    std::size_t kept = 0;
    std::uint64_t flops = 0;
    double entropy_total = 0.0;
};

/// Attention of q over the cache followed by bookkeeping: accumulators and per-token entropy.
struct Observation {
    Attention attention;
    double entropy_total = 0.0;
    bool has_visual = false;
};

inline Observation observe(Cache& cache, std::span<const double> q, std::size_t step) {
    Observation obs;
    obs.attention = cache.attend(q);
    cache.accumulate(obs.attention.weights);
    const bool any_visual = std::any_of(cache.entries().begin(), cache.entries().end(),
                                        [](const KVEntry& e) { return e.meta.is_visual(); });
    if (!any_visual) return obs;
    const EntropyReport rep = cross_modal_entropy(cache, obs.attention.weights, step);
    obs.has_visual = true;
    obs.entropy_total = rep.total;
    for (std::size_t i = 0; i < cache.size(); ++i) {
        if (cache[i].meta.is_visual()) cache.set_last_entropy(i, rep.per_token.at(cache[i].meta.token_id));
    }
    return obs;
}

namespace detail {

inline bool by_score_then_id(double sa, std::uint64_t ia, double sb, std::uint64_t ib) {
    if (sa != sb) return sa > sb;
    return ia < ib;
}

/// Ids of the `count` best entries among `indices` under score (ties: lower token id).
inline std::set<std::uint64_t> top_by(const Cache& cache, std::vector<std::size_t> indices,
                                      std::span<const double> score, std::size_t count) {
    std::sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
        return by_score_then_id(score[a], cache[a].id(), score[b], cache[b].id());
    });
    std::set<std::uint64_t> out;
    for (std::size_t i = 0; i < std::min(count, indices.size()); ++i) out.insert(cache[indices[i]].id());
    return out;
}

inline std::vector<double> accum_scores(const Cache& cache) {
    std::vector<double> s(cache.size());
    for (std::size_t i = 0; i < cache.size(); ++i) s[i] = cache[i].accum_attn;
    return s;
}

inline std::set<std::uint64_t> complement(const Cache& cache, const std::set<std::uint64_t>& keep) {
    std::set<std::uint64_t> out;
    for (const auto& e : cache.entries()) {
        if (keep.count(e.id()) == 0) out.insert(e.id());
    }
    return out;
}

inline StepOutcome local_outcome(const Cache& cache, const Observation& obs) {
    StepOutcome out;
    out.local_output = obs.attention.output;
    out.output = obs.attention.output;
    out.flops = flops::attention(cache.size(), cache.head_dim());
    out.entropy_total = obs.entropy_total;
    return out;
}

inline void drop_all(Cache& cache, const std::set<std::uint64_t>& evict, StepOutcome& out) {
    if (!evict.empty()) cache.evict(evict);
    out.evicted_count = evict.size();
    out.dropped_count = evict.size();
    out.kept = cache.size();
}

}  // namespace detail

/// Ids kept by a HeavyHitter policy: `keep - window` best by accumulated attention plus the
/// `window` most recent entries.
inline std::set<std::uint64_t> heavy_hitter_keep(const Cache& cache, std::size_t keep, std::size_t window = 0) {
    if (cache.size() <= keep) return detail::complement(cache, {});
    window = std::min(window, keep);
    std::set<std::uint64_t> kept;
    const std::size_t n = cache.size();
    for (std::size_t i = n - window; i < n; ++i) kept.insert(cache[i].id());
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i + window < n; ++i) rest.push_back(i);
    const auto scores = detail::accum_scores(cache);
    const auto heavy = detail::top_by(cache, rest, scores, keep - window);
    kept.insert(heavy.begin(), heavy.end());
    return kept;
}

inline StepOutcome full_cache_step(Cache& cache, std::span<const double> q, std::size_t step = 0) {
    const Observation obs = observe(cache, q, step);
    StepOutcome out = detail::local_outcome(cache, obs);
    out.kept = cache.size();
    return out;
}

inline StepOutcome sliding_window_step(Cache& cache, std::span<const double> q, std::size_t window, std::size_t sinks,
                                       std::size_t step = 0) {
    if (window == 0) throw Error(Errc::InvalidArgument, "sliding window must be >= 1");
    const Observation obs = observe(cache, q, step);
    StepOutcome out = detail::local_outcome(cache, obs);
    std::set<std::uint64_t> evict;
    const std::size_t n = cache.size();
    if (n > window + sinks) {
        for (std::size_t i = sinks; i < n - window; ++i) evict.insert(cache[i].id());
    }
    detail::drop_all(cache, evict, out);
    return out;
}

inline StepOutcome heavy_hitter_step(Cache& cache, std::span<const double> q, std::size_t keep,
                                     std::size_t window = 0, std::size_t step = 0) {
    const Observation obs = observe(cache, q, step);
    StepOutcome out = detail::local_outcome(cache, obs);
    std::set<std::uint64_t> evict;
    if (cache.size() > keep) evict = detail::complement(cache, heavy_hitter_keep(cache, keep, window));
    detail::drop_all(cache, evict, out);
    return out;
}

/// Observation-window attention mass per entry, max-pooled over `pool` sequence neighbours.
inline std::vector<double> snapkv_scores(const Cache& cache, std::span<const Vector> q_window, std::size_t pool) {
    if (pool == 0) throw Error(Errc::InvalidArgument, "pool width must be >= 1");
    const std::size_t n = cache.size();
    std::vector<double> mass(n, 0.0);
    for (const auto& q : q_window) {
        const Attention a = cache.attend(q);
        for (std::size_t i = 0; i < n; ++i) mass[i] += a.weights[i];
    }
    const std::size_t left = (pool - 1) / 2;
    const std::size_t right = pool - 1 - left;
    std::vector<double> pooled(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= left ? i - left : 0;
        const std::size_t hi = std::min(n - 1, i + right);
        pooled[i] = *std::max_element(mass.begin() + static_cast<std::ptrdiff_t>(lo),
                                      mass.begin() + static_cast<std::ptrdiff_t>(hi) + 1);
    }
    return pooled;
}

inline StepOutcome snapkv_step(Cache& cache, std::span<const double> q, std::span<const Vector> q_window,
                               std::size_t keep, std::size_t pool, std::size_t step = 0) {
    const Observation obs = observe(cache, q, step);
    StepOutcome out = detail::local_outcome(cache, obs);
    std::set<std::uint64_t> evict;
    if (cache.size() > keep && !q_window.empty()) {
        const auto scores = snapkv_scores(cache, q_window, pool);
        out.flops += q_window.size() * flops::attention(cache.size(), cache.head_dim());
        std::vector<std::size_t> all(cache.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        evict = detail::complement(cache, detail::top_by(cache, all, scores, keep));
    } else if (cache.size() > keep) {
        evict = detail::complement(cache, heavy_hitter_keep(cache, keep));
    }
    detail::drop_all(cache, evict, out);
    return out;
}

/// The continuous memories held by a RetentiveKV policy.
struct RetentiveMemory {
    std::map<std::uint32_t, ImageMemory> images;
    StateMatrix recall;
    bool initialized = false;

    std::size_t state_count() const noexcept { return initialized ? 2 * images.size() + 1 : 0; }
    std::size_t byte_size() const noexcept {
        std::size_t b = initialized ? recall.byte_size() : 0;
        for (const auto& [id, m] : images) b += m.byte_size();
        return b;
    }
    std::vector<ImageMemory> image_list() const {
        std::vector<ImageMemory> out;
        for (const auto& [id, m] : images) out.push_back(m);
        return out;
    }
};

/// Creates the recall state and, when modality states are on, one rooted memory per image in the cache.
inline void init_memory(RetentiveMemory& mem, const Cache& cache, bool modality_states) {
    mem.recall = StateMatrix::recall(cache.head_dim());
    mem.images.clear();
    if (modality_states) {
        std::map<std::uint32_t, std::map<GridPos, double>> maps;
        for (const auto& e : cache.entries()) {
            if (e.meta.is_visual()) maps[*e.meta.image_id][*e.meta.grid] += e.accum_attn;
        }
        for (const auto& [id, m] : maps) mem.images.emplace(id, ImageMemory::create(id, m, cache.head_dim()));
    }
    mem.initialized = true;
}

/// Window size W for a RetentiveKV policy at a given keep count.
inline std::size_t retentive_window(const PolicyConfig& cfg, std::size_t keep) {
    return std::min(cfg.window.value_or(std::min<std::size_t>(8, keep / 2)), keep);
}

inline StepOutcome retentive_step(Cache& cache, RetentiveMemory& mem, std::span<const double> q,
                                  const PolicyConfig& cfg, std::size_t keep, std::size_t step = 0) {
    if (cfg.kind != PolicyKind::RetentiveKV) throw Error(Errc::WrongKind, "retentive_step needs a RetentiveKV config");
    const std::size_t d = cache.head_dim();
    if (!mem.initialized) init_memory(mem, cache, cfg.ablation.modality_states);

    const Observation obs = observe(cache, q, step);
    StepOutcome out = detail::local_outcome(cache, obs);

    // Readout of the memory as it stood before this step's evictions.
    if (cfg.ablation.query_retrieval) {
        const auto imgs = mem.image_list();
        const double g = gate(obs.entropy_total, cfg.gate);
        out.retrieved = retrieve(q, imgs, mem.recall, g);
        out.output = cfg.fuse == FuseMode::Gated ? fuse_gated(out.local_output, *out.retrieved)
                                                 : fuse(out.local_output, *out.retrieved);
        out.flops += flops::retrieval(d) * mem.state_count();
    }

    const std::size_t window = retentive_window(cfg, keep);
    if (cache.size() <= keep) {
        out.kept = cache.size();
        return out;
    }
    const auto kept_ids = heavy_hitter_keep(cache, keep, window);
    std::set<std::uint64_t> heavy_ids;
    const std::size_t n = cache.size();
    for (std::size_t i = 0; i + window < n; ++i) {
        if (kept_ids.count(cache[i].id()) != 0) heavy_ids.insert(cache[i].id());
    }
    const std::vector<KVEntry> evicted = cache.evict(detail::complement(cache, kept_ids));
    out.evicted_count = evicted.size();
    out.kept = cache.size();

    const double lambda = cfg.ablation.entropy_metric ? cfg.lambda : 1.0;
    const Threshold thr = cfg.tau_absolute ? Threshold::absolute(*cfg.tau_absolute)
                                           : Threshold::quantile(cfg.tau_quantile);
    const auto decisions = partition_evicted(evicted, lambda, thr);

    std::map<std::uint32_t, std::vector<PatchUpdate>> patches;
    std::vector<KVEntry> to_recall;
    std::vector<double> recall_alpha;
    for (std::size_t i = 0; i < evicted.size(); ++i) {
        if (decisions[i].action != RetentionAction::Absorb) continue;
        const KVEntry& e = evicted[i];
        if (cfg.ablation.modality_states && e.meta.is_visual()) {
            patches[*e.meta.image_id].push_back({&e, decisions[i].alpha_norm});
        } else {
            to_recall.push_back(e);
            recall_alpha.push_back(decisions[i].alpha_norm);
        }
    }
    std::size_t absorbed = 0;
    for (auto& [image, list] : patches) {
        auto it = mem.images.find(image);
        if (it == mem.images.end()) throw Error(Errc::UnknownToken, "patch of an image without memory");
        absorbed += list.size();
        out.flops += 2 * flops::state_update(d) * list.size();
        absorb_patches(it->second, std::move(list));
    }
    if (!to_recall.empty()) {
        std::vector<double> h;
        for (const auto& e : to_recall) h.push_back(e.last_entropy);
        const double cut = cfg.entropy_cut.value_or(median(h));
        const std::size_t n_abs = recall_absorb(mem.recall, to_recall, recall_alpha, heavy_ids, cut);
        absorbed += n_abs;
        out.flops += flops::state_update(d) * n_abs;
    }
    out.absorbed_count = absorbed;
    out.dropped_count = out.evicted_count - absorbed;
    return out;
}

/// Owns one cache (and, for RetentiveKV, its memories) and drives a policy through prefill and decode.
class PolicyRunner {
public:
    PolicyRunner(PolicyConfig config, std::size_t head_dim) : m_config(std::move(config)), m_cache(head_dim) {}

    const PolicyConfig& config() const noexcept { return m_config; }
    const Cache& cache() const noexcept { return m_cache; }
    const RetentiveMemory& memory() const noexcept { return m_memory; }
    std::size_t tokens_seen() const noexcept { return m_seen; }
    std::size_t state_count() const noexcept { return m_memory.state_count(); }
    std::size_t state_bytes() const noexcept { return m_memory.byte_size(); }
    std::size_t cache_bytes() const noexcept { return m_cache.memory_bytes(); }
    std::size_t keep_count() const { return m_config.budget.keep_count(m_seen); }

    /// Prompt token; when it carries a query it attends causally over the prompt so far.
    std::optional<Observation> prefill(KVEntry entry, const std::optional<Vector>& query = std::nullopt) {
        m_cache.append(std::move(entry));
        ++m_seen;
        if (!query) return std::nullopt;
        m_prompt_queries.push_back(*query);
        if (m_prompt_queries.size() > m_config.snap_window) m_prompt_queries.pop_front();
        return observe(m_cache, *query, 0);
    }

    StepOutcome decode(KVEntry entry, std::span<const double> q, std::size_t step) {
        m_cache.append(std::move(entry));
        ++m_seen;
        const std::size_t keep = keep_count();
        switch (m_config.kind) {
            case PolicyKind::FullCache: return full_cache_step(m_cache, q, step);
            case PolicyKind::SlidingWindow: {
                const std::size_t sinks = std::min(m_config.sinks, keep > 0 ? keep - 1 : 0);
                const std::size_t window = m_config.window.value_or(std::max<std::size_t>(1, keep - sinks));
                return sliding_window_step(m_cache, q, window, sinks, step);
            }
            case PolicyKind::HeavyHitter: return heavy_hitter_step(m_cache, q, keep, 0, step);
            case PolicyKind::SnapKV: {
                const std::vector<Vector> window(m_prompt_queries.begin(), m_prompt_queries.end());
                return snapkv_step(m_cache, q, window, keep, m_config.pool, step);
            }
            case PolicyKind::RetentiveKV: return retentive_step(m_cache, m_memory, q, m_config, keep, step);
        }
        throw Error(Errc::InvalidArgument, "unknown policy kind");
    }

private:
    PolicyConfig m_config;
    Cache m_cache;
    RetentiveMemory m_memory;
    std::deque<Vector> m_prompt_queries;
    std::size_t m_seen = 0;
};

}  // namespace rkv
