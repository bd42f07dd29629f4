// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "retentivekv/numerics.hpp"

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

}  // namespace

TEST(Softmax, SymmetricInputIsUniform) {
    const Vector x = {0.0, 0.0};
    const auto p = softmax(x);
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, LogTwoGivesTwoThirds) {
    const Vector x = {std::log(2.0), 0.0};
    const auto p = softmax(x);
    EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsStayFinite) {
    const Vector x = {1000.0, 0.0};
    const auto p = softmax(x);
    EXPECT_TRUE(all_finite(p));
    EXPECT_NEAR(p[0], 1.0, 1e-15);
    EXPECT_GE(p[1], 0.0);
}

TEST(Softmax, Errors) {
    EXPECT_EQ(code_of([] { softmax(Vector{}); }), Errc::EmptyVector);
    EXPECT_EQ(code_of([] { softmax(Vector{0.0, std::nan("")}); }), Errc::NonFinite);
    EXPECT_EQ(code_of([] { softmax(Vector{std::numeric_limits<double>::infinity()}); }), Errc::NonFinite);
}

TEST(Softmax, SumsToOneOnRandomInputs) {
    RngStream rng(11);
    for (int t = 0; t < 200; ++t) {
        Vector x = rng.gaussian(1 + rng.below(50));
        for (auto& v : x) v *= 20.0;
        const auto p = softmax(x);
        EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
        for (double v : p) EXPECT_GT(v, 0.0 - 1e-300);
    }
}

TEST(LayerNorm, UnitPairIsUnchanged) {
    const auto y = layer_norm(Vector{1.0, -1.0}, 0.0);
    EXPECT_DOUBLE_EQ(y[0], 1.0);
    EXPECT_DOUBLE_EQ(y[1], -1.0);
}

TEST(LayerNorm, ConstantInputCollapsesToZero) {
    const auto y = layer_norm(Vector{5.0, 5.0}, 1e-5);
    EXPECT_EQ(y, (Vector{0.0, 0.0}));
}

TEST(LayerNorm, ThreeValuesHandComputed) {
    // mean 2, population variance 2/3, sigma = sqrt(2/3)
    const auto y = layer_norm(Vector{3.0, 1.0, 2.0}, 0.0);
    const double s = std::sqrt(2.0 / 3.0);
    EXPECT_NEAR(y[0], 1.0 / s, 1e-12);
    EXPECT_NEAR(y[1], -1.0 / s, 1e-12);
    EXPECT_NEAR(y[2], 0.0, 1e-12);
}

TEST(LayerNorm, MeanZeroVarianceOneProperty) {
    RngStream rng(3);
    for (int t = 0; t < 100; ++t) {
        const Vector x = rng.gaussian(2 + rng.below(30));
        const auto y = layer_norm(x, 0.0);
        double mean = 0.0;
        for (double v : y) mean += v;
        mean /= static_cast<double>(y.size());
        double var = 0.0;
        for (double v : y) var += (v - mean) * (v - mean);
        var /= static_cast<double>(y.size());
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var, 1.0, 1e-10);
    }
}

TEST(LayerNorm, TooShortIsDegenerate) {
    EXPECT_EQ(code_of([] { layer_norm(Vector{1.0}); }), Errc::DegenerateNorm);
    EXPECT_EQ(code_of([] { layer_norm(Vector{}); }), Errc::DegenerateNorm);
}

TEST(Outer, Examples) {
    EXPECT_EQ(outer(Vector{1, 0}, Vector{0, 1}), Matrix(2, 2, {0, 1, 0, 0}));
    EXPECT_TRUE(outer(Vector{0, 0}, Vector{3, 4}).is_zero());
    EXPECT_EQ(outer(Vector{1, 2}, Vector{3, 4}), Matrix(2, 2, {3, 4, 6, 8}));
    EXPECT_EQ(code_of([] { outer(Vector{1}, Vector{1, 2}); }), Errc::ShapeMismatch);
}

TEST(VecMat, Examples) {
    EXPECT_EQ(vec_mat(Vector{1, 0}, Matrix::identity(2)), (Vector{1, 0}));
    EXPECT_EQ(vec_mat(Vector{1, 1}, Matrix(2, 2, {0, 0.5, 1, 0})), (Vector{1, 0.5}));
    EXPECT_EQ(vec_mat(Vector{0, 0}, Matrix(2, 2, {1, 2, 3, 4})), (Vector{0, 0}));
    EXPECT_EQ(code_of([] { vec_mat(Vector{1, 2, 3}, Matrix::identity(2)); }), Errc::ShapeMismatch);
}

TEST(MatrixType, RejectsWrongElementCount) {
    EXPECT_EQ(code_of([] { Matrix(2, 2, {1, 2, 3}); }), Errc::ShapeMismatch);
}

TEST(Logistic, StableAtExtremes) {
    EXPECT_DOUBLE_EQ(logistic(0.0), 0.5);
    EXPECT_NEAR(logistic(std::log(2.0)), 2.0 / 3.0, 1e-15);
    EXPECT_TRUE(std::isfinite(logistic(-800.0)));
    EXPECT_EQ(logistic(800.0), 1.0);
}

TEST(Rng, SameSeedSameStream) {
    RngStream a(42);
    RngStream b(42);
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, KnownFirstOutputs) {
    // First splitmix64 output from state 0 is a widely published constant.
    std::uint64_t sm = 0;
    std::uint64_t s[4];
    for (auto& w : s) w = splitmix64(sm);
    EXPECT_EQ(s[0], 0xE220A8397B1DCDAFULL);
    RngStream r(0);
    auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    EXPECT_EQ(r.next_u64(), rotl(s[1] * 5, 7) * 9);
}

TEST(Rng, UniformInRangeAndBelowBounded) {
    RngStream r(9);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        EXPECT_LT(r.below(7), 7u);
    }
}

TEST(Rng, NormalMomentsRoughlyStandard) {
    RngStream r(5);
    double s = 0.0;
    double s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, DerivedSeedsDiffer) {
    EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
    EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
    EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
}

TEST(Rng, ShuffleIsPermutation) {
    RngStream r(1);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    r.shuffle(v);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}
