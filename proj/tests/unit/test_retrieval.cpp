// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "retentivekv/retrieval.hpp"

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

ImageMemory image_with(const Matrix& row, const Matrix& col) {
    ImageMemory m = ImageMemory::create(0, {{{0, 0}, 1.0}}, row.rows());
    m.by_row.S = row;
    m.by_col.S = col;
    return m;
}

}  // namespace

TEST(Gate, Examples) {
    EXPECT_DOUBLE_EQ(gate(3.7, {0.0, 0.0}), 0.5);
    EXPECT_DOUBLE_EQ(gate(0.0, {1.0, 0.0}), 0.5);
    EXPECT_NEAR(gate(std::log(2.0), {1.0, 0.0}), 2.0 / 3.0, 1e-15);
}

TEST(Gate, MonotoneForPositiveWeight) {
    double prev = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double g = gate(0.05 * i, {0.7, -1.0});
        EXPECT_GT(g, prev);
        EXPECT_LT(g, 1.0);
        prev = g;
    }
}

TEST(Gate, StaysStrictlyInsideUnitInterval) {
    EXPECT_GT(gate(0.0, {0.0, -1000.0}), 0.0);
    EXPECT_LT(gate(0.0, {0.0, 1000.0}), 1.0);
}

TEST(Retrieve, EmptyMemoryGivesZero) {
    const std::vector<ImageMemory> imgs = {image_with(Matrix(3, 3), Matrix(3, 3))};
    const auto r = retrieve(Vector{1, 2, 3}, imgs, StateMatrix::recall(3), 0.5);
    EXPECT_EQ(r.o_s, Vector(3, 0.0));
}

TEST(Retrieve, ZeroQueryGivesZero) {
    Matrix s(2, 2, {1, 2, 3, 4});
    const std::vector<ImageMemory> imgs = {image_with(s, s)};
    StateMatrix rec = StateMatrix::recall(2);
    rec.S = s;
    EXPECT_EQ(retrieve(Vector{0, 0}, imgs, rec, 0.3).o_s, Vector(2, 0.0));
}

TEST(Retrieve, ScaledIdentityVisualState) {
    Matrix c = Matrix::identity(3);
    c *= 2.5;
    const std::vector<ImageMemory> imgs = {image_with(c, c)};
    const Vector q = {1, -2, 4};
    const auto r = retrieve(q, imgs, StateMatrix::recall(3), 0.5);
    EXPECT_EQ(r.visual_part, (Vector{2.5, -5, 10}));
    EXPECT_EQ(r.o_s, layer_norm(Vector{2.5, -5, 10}));
}

TEST(Retrieve, AveragesScansAndSumsImages) {
    const std::vector<ImageMemory> imgs = {image_with(Matrix(2, 2, {1, 0, 0, 0}), Matrix(2, 2, {0, 0, 0, 1})),
                                           image_with(Matrix(2, 2, {2, 0, 0, 0}), Matrix(2, 2, {2, 0, 0, 0}))};
    StateMatrix rec = StateMatrix::recall(2);
    rec.S = Matrix(2, 2, {0, 1, 1, 0});
    const auto r = retrieve(Vector{1, 1}, imgs, rec, 0.25);
    EXPECT_EQ(r.visual_part, (Vector{2.5, 0.5}));
    EXPECT_EQ(r.recall_part, (Vector{1, 1}));
    EXPECT_EQ(r.o_s, layer_norm(Vector{2.75, 0.75}));
    EXPECT_EQ(r.gate, 0.25);
}

TEST(Retrieve, PreNormPartsAreLinearInQuery) {
    RngStream rng(4);
    std::vector<ImageMemory> imgs;
    for (int i = 0; i < 3; ++i) {
        Matrix a(4, 4, rng.gaussian(16));
        Matrix b(4, 4, rng.gaussian(16));
        imgs.push_back(image_with(a, b));
    }
    StateMatrix rec = StateMatrix::recall(4);
    rec.S = Matrix(4, 4, rng.gaussian(16));
    for (int t = 0; t < 50; ++t) {
        const Vector q1 = rng.gaussian(4);
        const Vector q2 = rng.gaussian(4);
        const double a = rng.normal();
        const double b = rng.normal();
        Vector q(4);
        for (int j = 0; j < 4; ++j) q[j] = a * q1[j] + b * q2[j];
        const auto r = retrieve(q, imgs, rec, 0.5);
        const auto r1 = retrieve(q1, imgs, rec, 0.5);
        const auto r2 = retrieve(q2, imgs, rec, 0.5);
        for (int j = 0; j < 4; ++j) {
            EXPECT_NEAR(r.visual_part[j], a * r1.visual_part[j] + b * r2.visual_part[j], 1e-12);
            EXPECT_NEAR(r.recall_part[j], a * r1.recall_part[j] + b * r2.recall_part[j], 1e-12);
        }
    }
}

TEST(Retrieve, Errors) {
    EXPECT_EQ(code_of([] { retrieve(Vector{1, 2}, {}, StateMatrix::recall(3), 0.5); }), Errc::ShapeMismatch);
    EXPECT_EQ(code_of([] { retrieve(Vector{1, 2}, {}, StateMatrix::recall(2), 1.0); }), Errc::OutOfRange);
}

TEST(Fuse, ZeroRetrievalIsBitIdentical) {
    RetrievedOutput z{Vector(3, 0.0), 0.5, Vector(3, 0.0), Vector(3, 0.0)};
    const Vector local = {0.1, -0.0, 1e-300};
    const Vector a = fuse(local, z);
    const Vector b = fuse_gated(local, z);
    for (int j = 0; j < 3; ++j) {
        EXPECT_EQ(std::signbit(a[j]), std::signbit(local[j]));
        EXPECT_EQ(a[j], local[j]);
        EXPECT_EQ(b[j], local[j]);
    }
}

TEST(Fuse, ZeroLocalGivesRetrieved) {
    RetrievedOutput r{Vector{0.5, -0.5}, 0.5, {}, {}};
    EXPECT_EQ(fuse(Vector{0, 0}, r), (Vector{0.5, -0.5}));
}

TEST(Fuse, UnitAddition) {
    RetrievedOutput r{Vector{0.5, -0.5}, 0.3, {}, {}};
    EXPECT_EQ(fuse(Vector{1, 2}, r), (Vector{1.5, 1.5}));
}

TEST(Fuse, GatedAddition) {
    RetrievedOutput r{Vector{1, -1}, 0.5, {}, {}};
    EXPECT_EQ(fuse_gated(Vector{1, 2}, r), (Vector{1.5, 1.5}));
    EXPECT_EQ(code_of([&] { fuse(Vector{1, 2, 3}, r); }), Errc::ShapeMismatch);
}
