// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "retentivekv/error.hpp"
#include "retentivekv/numerics.hpp"
#include "retentivekv/state_space.hpp"

namespace rkv {

struct GateParams {
    double w_r = 1.0;
    double b_r = 0.0;
    friend bool operator==(const GateParams&, const GateParams&) = default;
};

inline constexpr double kGateFloor = 1e-12;

/// sigmoid(w_r * h + b_r), clamped away from 0 and 1.
inline double gate(double h_avg, const GateParams& params) {
    if (!std::isfinite(h_avg)) throw Error(Errc::NonFinite, "gate input not finite");
    return std::clamp(logistic(params.w_r * h_avg + params.b_r), kGateFloor, 1.0 - kGateFloor);
}

struct RetrievedOutput {
    Vector o_s;
    double gate = 0.0;
    Vector visual_part;
    Vector recall_part;
};

inline RetrievedOutput retrieve(std::span<const double> q, std::span<const ImageMemory> images,
                                const StateMatrix& recall, double gate_value) {
    const std::size_t d = q.size();
    if (recall.dim() != d) throw Error(Errc::ShapeMismatch, "recall state dim != query dim");
    if (!(gate_value > 0.0 && gate_value < 1.0)) throw Error(Errc::OutOfRange, "gate must lie in (0,1)");
    RetrievedOutput out;
    out.gate = gate_value;
    out.visual_part.assign(d, 0.0);
    for (const auto& img : images) {
        if (img.by_row.dim() != d || img.by_col.dim() != d) throw Error(Errc::ShapeMismatch, "visual state dim");
        const Vector r = vec_mat(q, img.by_row.S);
        const Vector c = vec_mat(q, img.by_col.S);
        for (std::size_t j = 0; j < d; ++j) out.visual_part[j] += 0.5 * (r[j] + c[j]);
    }
    out.recall_part = vec_mat(q, recall.S);
    Vector mix(d);
    for (std::size_t j = 0; j < d; ++j) mix[j] = out.visual_part[j] + gate_value * out.recall_part[j];
    out.o_s = d >= 2 ? layer_norm(mix) : Vector(d, 0.0);
    return out;
}

/// local + coefficient * o_s. Zero terms are skipped so an empty memory leaves `local` untouched.
inline Vector fuse(std::span<const double> local, const RetrievedOutput& retrieved, double coefficient) {
    if (local.size() != retrieved.o_s.size()) throw Error(Errc::ShapeMismatch, "fuse dims differ");
    Vector out(local.begin(), local.end());
    if (coefficient == 0.0) return out;
    for (std::size_t j = 0; j < out.size(); ++j) {
        const double add = coefficient * retrieved.o_s[j];
        if (add != 0.0) out[j] += add;
    }
    return out;
}

/// Unit-coefficient fusion.
inline Vector fuse(std::span<const double> local, const RetrievedOutput& retrieved) {
    return fuse(local, retrieved, 1.0);
}

/// Fusion scaled by the retrieval gate.
inline Vector fuse_gated(std::span<const double> local, const RetrievedOutput& retrieved) {
    return fuse(local, retrieved, retrieved.gate);
}

}  // namespace rkv
