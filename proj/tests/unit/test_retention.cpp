// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "retentivekv/retention.hpp"

using namespace rkv;

namespace {

template <typename Fn>
Errc code_of(Fn fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an rkv::Error";
    return Errc::InvalidArgument;
}

KVEntry candidate(std::uint64_t id, double accum, double entropy) {
    KVEntry e;
    e.meta = TokenMeta::text(id, id);
    e.key = {0.0};
    e.value = {0.0};
    e.accum_attn = accum;
    e.last_entropy = entropy;
    return e;
}

std::size_t absorbed(const std::vector<RetentionDecision>& ds) {
    return static_cast<std::size_t>(
        std::count_if(ds.begin(), ds.end(), [](const auto& d) { return d.action == RetentionAction::Absorb; }));
}

}  // namespace

TEST(CrossModalEntropy, TwoVisualAmongOthers) {
    const Vector w = {0.25, 0.25, 0.5};
    const auto r = cross_modal_entropy(w, {true, true, false}, 3);
    EXPECT_EQ(r.step, 3u);
    ASSERT_EQ(r.per_token.size(), 2u);
    EXPECT_NEAR(r.per_token.at(0), 0.34657359027997264, 1e-12);
    EXPECT_NEAR(r.per_token.at(1), 0.34657359027997264, 1e-12);
    EXPECT_NEAR(r.total, 0.6931471805599453, 1e-12);
}

TEST(CrossModalEntropy, SingleVisualIsZero) {
    const auto r = cross_modal_entropy(Vector{0.3, 0.7}, {false, true}, 0);
    EXPECT_EQ(r.total, 0.0);
}

TEST(CrossModalEntropy, FourUniformIsLogFour) {
    const auto r = cross_modal_entropy(Vector{0.25, 0.25, 0.25, 0.25}, {true, true, true, true}, 0);
    EXPECT_NEAR(r.total, std::log(4.0), 1e-12);
}

TEST(CrossModalEntropy, UsesTokenIdsWhenGiven) {
    const std::vector<std::uint64_t> ids = {10, 20};
    const auto r = cross_modal_entropy(Vector{0.5, 0.5}, {true, true}, 0, ids);
    EXPECT_EQ(r.per_token.count(10), 1u);
    EXPECT_EQ(r.per_token.count(20), 1u);
}

TEST(CrossModalEntropy, Errors) {
    EXPECT_EQ(code_of([] { cross_modal_entropy(Vector{0.5, 0.5}, {false, false}, 0); }), Errc::NoVisualTokens);
    EXPECT_EQ(code_of([] { cross_modal_entropy(Vector{0.5, 0.6}, {true, true}, 0); }), Errc::NotADistribution);
    EXPECT_EQ(code_of([] { cross_modal_entropy(Vector{1.5, -0.5}, {true, true}, 0); }), Errc::NotADistribution);
    EXPECT_EQ(code_of([] { cross_modal_entropy(Vector{1.0}, {true, true}, 0); }), Errc::ShapeMismatch);
}

TEST(CrossModalEntropy, ZeroVisualMassReportsZero) {
    const auto r = cross_modal_entropy(Vector{0.0, 1.0}, {true, false}, 0);
    EXPECT_EQ(r.total, 0.0);
    EXPECT_EQ(r.per_token.at(0), 0.0);
}

TEST(CrossModalEntropy, InvariantsOnRandomDistributions) {
    RngStream rng(17);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 1 + rng.below(30);
        Vector w(n);
        std::vector<bool> mask(n);
        double s = 0.0;
        std::size_t nv = 0;
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = rng.uniform();
            s += w[i];
            mask[i] = i == 0 || rng.uniform() < 0.5;
            nv += mask[i];
        }
        for (auto& x : w) x /= s;
        const auto r = cross_modal_entropy(w, mask, 0);
        double sum = 0.0;
        for (const auto& [id, h] : r.per_token) {
            EXPECT_GE(h, 0.0);
            sum += h;
        }
        EXPECT_NEAR(sum, r.total, 1e-10);
        EXPECT_GE(r.total, 0.0);
        EXPECT_LE(r.total, std::log(static_cast<double>(nv)) + 1e-12);

        // Permuting the visual weights among visual slots leaves the total unchanged.
        std::vector<std::size_t> vis;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask[i]) vis.push_back(i);
        }
        Vector vw;
        for (auto i : vis) vw.push_back(w[i]);
        rng.shuffle(vw);
        Vector w2 = w;
        for (std::size_t j = 0; j < vis.size(); ++j) w2[vis[j]] = vw[j];
        EXPECT_NEAR(cross_modal_entropy(w2, mask, 0).total, r.total, 1e-12);
    }
}

TEST(CrossModalEntropy, UniformIsTheMaximum) {
    for (std::size_t n = 2; n < 40; ++n) {
        const Vector u(n, 1.0 / static_cast<double>(n));
        const std::vector<bool> mask(n, true);
        EXPECT_NEAR(cross_modal_entropy(u, mask, 0).total, std::log(static_cast<double>(n)), 1e-10);
        Vector skew = u;
        skew[0] += 0.1 / static_cast<double>(n);
        skew[1] -= 0.1 / static_cast<double>(n);
        EXPECT_LT(cross_modal_entropy(skew, mask, 0).total, std::log(static_cast<double>(n)));
    }
}

TEST(RetentionScore, Examples) {
    EXPECT_DOUBLE_EQ(retention_score(0.3, 0.9, 1.0), 0.3);
    EXPECT_DOUBLE_EQ(retention_score(0.3, 0.9, 0.0), 0.9);
    EXPECT_NEAR(retention_score(0.2, 0.6, 0.5), 0.4, 1e-15);
    EXPECT_EQ(code_of([] { retention_score(1.2, 0.0, 0.5); }), Errc::OutOfRange);
    EXPECT_EQ(code_of([] { retention_score(0.2, 0.0, -0.1); }), Errc::OutOfRange);
}

TEST(RetentionScore, MonotoneInBothArguments) {
    RngStream rng(2);
    for (int t = 0; t < 500; ++t) {
        const double l = rng.uniform();
        const double a = rng.uniform();
        const double h = rng.uniform();
        const double da = (1.0 - a) * rng.uniform();
        const double dh = (1.0 - h) * rng.uniform();
        EXPECT_LE(retention_score(a, h, l), retention_score(a + da, h, l));
        EXPECT_LE(retention_score(a, h, l), retention_score(a, h + dh, l));
    }
}

TEST(NormalizeScores, Examples) {
    auto r = normalize_scores({{1, 2.0}, {2, 4.0}});
    EXPECT_EQ(r.at(1), 0.0);
    EXPECT_EQ(r.at(2), 1.0);
    r = normalize_scores({{1, 3.0}, {2, 3.0}});
    EXPECT_EQ(r.at(1), 1.0);
    EXPECT_EQ(r.at(2), 1.0);
    r = normalize_scores({{1, 1.0}, {2, 2.0}, {3, 4.0}});
    EXPECT_EQ(r.at(1), 0.0);
    EXPECT_NEAR(r.at(2), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(r.at(3), 1.0);
    EXPECT_EQ(code_of([] { normalize_scores({{1, -1.0}}); }), Errc::NegativeInput);
}

TEST(PartitionEvicted, QuantileExtremes) {
    const std::vector<KVEntry> c = {candidate(0, 1.0, 0.1), candidate(1, 2.0, 0.5), candidate(2, 3.0, 0.2),
                                    candidate(3, 0.5, 0.9)};
    EXPECT_EQ(absorbed(partition_evicted(c, 0.5, Threshold::quantile(0.0))), 4u);
    const auto top = partition_evicted(c, 0.5, Threshold::quantile(1.0));
    ASSERT_EQ(absorbed(top), 1u);
    const auto best = std::max_element(top.begin(), top.end(), [](auto& a, auto& b) { return a.score < b.score; });
    EXPECT_EQ(best->action, RetentionAction::Absorb);
}

TEST(PartitionEvicted, MedianSplitsDistinctScores) {
    // lambda = 1 makes R the normalized accumulation: 0, 1/3, 2/3, 1.
    const std::vector<KVEntry> c = {candidate(0, 1.0, 0.0), candidate(1, 2.0, 0.0), candidate(2, 3.0, 0.0),
                                    candidate(3, 4.0, 0.0)};
    const auto d = partition_evicted(c, 1.0, Threshold::quantile(0.5));
    EXPECT_EQ(d[0].action, RetentionAction::Drop);
    EXPECT_EQ(d[1].action, RetentionAction::Drop);
    EXPECT_EQ(d[2].action, RetentionAction::Absorb);
    EXPECT_EQ(d[3].action, RetentionAction::Absorb);
}

TEST(PartitionEvicted, TiesAtThresholdAllAbsorb) {
    const std::vector<KVEntry> c = {candidate(0, 1.0, 0.0), candidate(1, 2.0, 0.0), candidate(2, 2.0, 0.0)};
    EXPECT_EQ(absorbed(partition_evicted(c, 1.0, Threshold::quantile(1.0))), 2u);
}

TEST(PartitionEvicted, AbsoluteThreshold) {
    const std::vector<KVEntry> c = {candidate(0, 0.0, 0.0), candidate(1, 1.0, 0.0), candidate(2, 2.0, 0.0)};
    EXPECT_EQ(absorbed(partition_evicted(c, 1.0, Threshold::absolute(0.5))), 2u);
}

TEST(PartitionEvicted, AbsorbScoresDominateDropScores) {
    RngStream rng(8);
    for (int t = 0; t < 200; ++t) {
        std::vector<KVEntry> c;
        const std::size_t n = 1 + rng.below(20);
        for (std::size_t i = 0; i < n; ++i) c.push_back(candidate(i, 5.0 * rng.uniform(), 2.0 * rng.uniform()));
        const double lambda = rng.uniform();
        const double q = rng.uniform();
        const double q2 = q + (1.0 - q) * rng.uniform();
        const auto lo = partition_evicted(c, lambda, Threshold::quantile(q));
        const auto hi = partition_evicted(c, lambda, Threshold::quantile(q2));
        double min_abs = 2.0;
        double max_drop = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (lo[i].action == RetentionAction::Absorb) min_abs = std::min(min_abs, lo[i].score);
            else max_drop = std::max(max_drop, lo[i].score);
            // Raising the quantile can only shrink the absorb set.
            if (hi[i].action == RetentionAction::Absorb) EXPECT_EQ(lo[i].action, RetentionAction::Absorb);
        }
        EXPECT_GT(min_abs, max_drop);
    }
}

TEST(PartitionEvicted, EmptyCandidatesRejected) {
    EXPECT_EQ(code_of([] { partition_evicted(std::vector<KVEntry>{}, 0.5); }), Errc::EmptyVector);
}
