// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "retentivekv/error.hpp"
#include "retentivekv/kv_cache.hpp"
#include "retentivekv/numerics.hpp"

namespace rkv {

/// Cross-modal attention entropy of one query, restricted to visual positions.
struct EntropyReport {
    std::map<std::uint64_t, double> per_token;  // token id -> -p ln p (nats)
    double total = 0.0;
    std::size_t step = 0;
};

enum class RetentionAction : std::uint8_t { Keep, Absorb, Drop };

struct RetentionDecision {
    std::uint64_t token_id = 0;
    double score = 0.0;
    RetentionAction action = RetentionAction::Drop;
    double alpha_norm = 0.0;
    double entropy_norm = 0.0;
};

/// How the absorb threshold is derived from candidate scores.
struct Threshold {
    enum class Mode : std::uint8_t { Quantile, Absolute };
    Mode mode = Mode::Quantile;
    double value = 0.5;

    static Threshold quantile(double q) { return {Mode::Quantile, q}; }
    static Threshold absolute(double tau) { return {Mode::Absolute, tau}; }
};

inline constexpr double kDistributionTolerance = 1e-9;

/// `token_ids` may be empty, in which case entries are keyed by their index.
inline EntropyReport cross_modal_entropy(std::span<const double> weights, const std::vector<bool>& visual_mask,
                                         std::size_t step, std::span<const std::uint64_t> token_ids = {}) {
    if (weights.size() != visual_mask.size()) throw Error(Errc::ShapeMismatch, "mask length != weights length");
    if (!token_ids.empty() && token_ids.size() != weights.size()) {
        throw Error(Errc::ShapeMismatch, "token id count != weights length");
    }
    double sum = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0) throw Error(Errc::NotADistribution, "weights must be finite and nonnegative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > kDistributionTolerance) throw Error(Errc::NotADistribution, "weights do not sum to 1");

    double visual_mass = 0.0;
    std::size_t visual_count = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (visual_mask[i]) {
            visual_mass += weights[i];
            ++visual_count;
        }
    }
    if (visual_count == 0) throw Error(Errc::NoVisualTokens, "no visual positions in attention distribution");

    EntropyReport report;
    report.step = step;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!visual_mask[i]) continue;
        const std::uint64_t key = token_ids.empty() ? i : token_ids[i];
        // All visual weight underflowed: the renormalized distribution is undefined, report zero.
        const double p = visual_mass > 0.0 ? weights[i] / visual_mass : 0.0;
        const double h = p > 0.0 ? -p * std::log(p) : 0.0;
        report.per_token[key] = h;
        report.total += h;
    }
    return report;
}

/// Convenience overload reading the modality mask and ids straight from a cache.
inline EntropyReport cross_modal_entropy(const Cache& cache, std::span<const double> weights, std::size_t step) {
    std::vector<bool> mask(cache.size());
    std::vector<std::uint64_t> ids(cache.size());
    for (std::size_t i = 0; i < cache.size(); ++i) {
        mask[i] = cache[i].meta.is_visual();
        ids[i] = cache[i].meta.token_id;
    }
    return cross_modal_entropy(weights, mask, step, ids);
}

inline double retention_score(double alpha_norm, double entropy_norm, double lambda) {
    auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!in_unit(alpha_norm) || !in_unit(entropy_norm) || !in_unit(lambda)) {
        throw Error(Errc::OutOfRange, "retention_score inputs must lie in [0,1]");
    }
    return lambda * alpha_norm + (1.0 - lambda) * entropy_norm;
}

/// Min-max normalization; a constant input maps every value to 1.
inline std::vector<double> normalize_min_max(std::span<const double> values) {
    if (values.empty()) throw Error(Errc::EmptyVector, "normalize of empty set");
    for (double v : values) {
        if (v < 0.0) throw Error(Errc::NegativeInput, "normalize_scores input must be nonnegative");
    }
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double min = *lo;
    const double range = *hi - *lo;
    std::vector<double> out(values.size(), 1.0);
    if (range > 0.0) {
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - min) / range;
    }
    return out;
}

inline std::map<std::uint64_t, double> normalize_scores(const std::map<std::uint64_t, double>& values) {
    std::vector<double> raw;
    raw.reserve(values.size());
    for (const auto& [id, v] : values) raw.push_back(v);
    const auto norm = normalize_min_max(raw);
    std::map<std::uint64_t, double> out;
    std::size_t i = 0;
    for (const auto& [id, v] : values) out[id] = norm[i++];
    return out;
}

/// Higher-rank empirical quantile: sorted[ceil(q * (n - 1))].
inline double upper_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw Error(Errc::EmptyVector, "quantile of empty set");
    if (!(q >= 0.0 && q <= 1.0)) throw Error(Errc::OutOfRange, "quantile must lie in [0,1]");
    std::sort(values.begin(), values.end());
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size() - 1)));
    return values[std::min(idx, values.size() - 1)];
}

/// Scores eviction candidates and splits them into Absorb (R at or above threshold) and Drop.
inline std::vector<RetentionDecision> partition_evicted(std::span<const KVEntry> candidates, double lambda,
                                                        Threshold threshold = {}) {
    if (candidates.empty()) throw Error(Errc::EmptyVector, "partition_evicted needs candidates");
    std::vector<double> alpha;
    std::vector<double> entropy;
    alpha.reserve(candidates.size());
    entropy.reserve(candidates.size());
    for (const auto& c : candidates) {
        alpha.push_back(c.accum_attn);
        entropy.push_back(c.last_entropy);
    }
    const auto alpha_n = normalize_min_max(alpha);
    const auto entropy_n = normalize_min_max(entropy);

    std::vector<RetentionDecision> out(candidates.size());
    std::vector<double> scores(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        scores[i] = retention_score(alpha_n[i], entropy_n[i], lambda);
        out[i] = {candidates[i].meta.token_id, scores[i], RetentionAction::Drop, alpha_n[i], entropy_n[i]};
    }
    const double tau = threshold.mode == Threshold::Mode::Quantile ? upper_quantile(scores, threshold.value)
                                                                   : threshold.value;
    for (auto& d : out) d.action = d.score >= tau ? RetentionAction::Absorb : RetentionAction::Drop;
    return out;
}

}  // namespace rkv
