// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "retentivekv/error.hpp"
#include "retentivekv/kv_cache.hpp"
#include "retentivekv/numerics.hpp"

namespace rkv {

struct VisualDominant {
    std::uint32_t image_id = 0;
    GridPos root;
    friend bool operator==(const VisualDominant&, const VisualDominant&) = default;
};

struct RecallOriented {
    friend bool operator==(const RecallOriented&, const RecallOriented&) = default;
};

using StateKind = std::variant<VisualDominant, RecallOriented>;

/// A d x d continuous memory. Its footprint does not depend on how many tokens it has absorbed.
struct StateMatrix {
    Matrix S;
    std::uint64_t absorbed_count = 0;
    StateKind kind = RecallOriented{};

    StateMatrix() = default;
    StateMatrix(std::size_t d, StateKind k) : S(d, d), kind(k) {}

    static StateMatrix recall(std::size_t d) { return {d, RecallOriented{}}; }

    std::size_t dim() const noexcept { return S.rows(); }
    bool is_visual() const noexcept { return std::holds_alternative<VisualDominant>(kind); }
    std::size_t byte_size() const noexcept { return S.rows() * S.cols() * sizeof(double); }

    friend bool operator==(const StateMatrix&, const StateMatrix&) = default;
};

inline void check_pair(const StateMatrix& s, std::span<const double> k, std::span<const double> v) {
    if (k.size() != s.dim() || v.size() != s.dim()) throw Error(Errc::ShapeMismatch, "key/value dims != state dim");
}

inline void check_gamma(double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(Errc::OutOfRange, "gamma must lie in (0,1]");
}

/// S <- gamma * S + k^T v
inline void plain_update(StateMatrix& state, std::span<const double> k, std::span<const double> v, double gamma) {
    check_pair(state, k, v);
    check_gamma(gamma);
    decay_and_inject(state.S, gamma, 1.0, k, v);
    ++state.absorbed_count;
}

struct KVPair {
    Vector k;
    Vector v;
};

/// Closed-form decayed sum over the whole sequence, evaluated term by term.
inline Matrix explicit_sum_oracle(std::span<const KVPair> pairs, double gamma) {
    if (pairs.empty()) throw Error(Errc::EmptyVector, "explicit_sum_oracle needs at least one pair");
    const std::size_t d = pairs.front().k.size();
    const std::size_t t = pairs.size() - 1;
    Matrix out(d, d);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const double w = std::pow(gamma, static_cast<double>(t - i));
        if (w == 0.0) continue;
        Matrix term = outer(pairs[i].k, pairs[i].v);
        term *= w;
        out += term;
    }
    return out;
}

/// S <- sigmoid(entropy) * S + alpha_norm * k^T v
inline void entropy_update(StateMatrix& state, std::span<const double> k, std::span<const double> v, double entropy,
                           double alpha_norm) {
    check_pair(state, k, v);
    if (entropy < 0.0 || !std::isfinite(entropy)) throw Error(Errc::OutOfRange, "entropy must be finite and >= 0");
    if (!(alpha_norm >= 0.0 && alpha_norm <= 1.0)) throw Error(Errc::OutOfRange, "alpha_norm must lie in [0,1]");
    decay_and_inject(state.S, logistic(entropy), alpha_norm, k, v);
    ++state.absorbed_count;
}

struct DecayMask {
    std::size_t L = 0;
    Matrix H_mask;
    Matrix A_mask;
};

/// x^n with the convention 0^0 = 1.
inline double int_pow(double base, std::size_t n) {
    double r = 1.0;
    for (std::size_t i = 0; i < n; ++i) r *= base;
    return r;
}

inline DecayMask build_masks(std::size_t L, double entropy, double alpha_norm) {
    if (L == 0) throw Error(Errc::InvalidArgument, "mask length must be >= 1");
    const double decay = logistic(entropy);
    DecayMask m{L, Matrix(L, L), Matrix(L, L)};
    for (std::size_t n = 0; n < L; ++n) {
        for (std::size_t j = 0; j <= n; ++j) {
            m.H_mask(n, j) = int_pow(decay, n - j);
            m.A_mask(n, j) = int_pow(alpha_norm, n - j);
        }
    }
    return m;
}

/// Parallel form over one chunk starting from a zero state: the last row of H_mask weights each
/// pair's injection alpha_norm * k^T v by its decay to the end of the chunk.
inline Matrix chunk_absorb(std::span<const KVPair> pairs, double entropy, double alpha_norm) {
    if (pairs.empty()) throw Error(Errc::EmptyVector, "chunk_absorb needs at least one pair");
    const std::size_t L = pairs.size();
    const std::size_t d = pairs.front().k.size();
    const DecayMask mask = build_masks(L, entropy, alpha_norm);
    Matrix out(d, d);
    for (std::size_t m = 0; m < L; ++m) {
        if (pairs[m].k.size() != d || pairs[m].v.size() != d) throw Error(Errc::ShapeMismatch, "chunk pair dims");
        const double w = mask.H_mask(L - 1, m) * alpha_norm;
        if (w == 0.0) continue;
        for (std::size_t i = 0; i < d; ++i) {
            const double ki = w * pairs[m].k[i];
            for (std::size_t j = 0; j < d; ++j) out(i, j) += ki * pairs[m].v[j];
        }
    }
    return out;
}

/// Zero state rooted at the patch with the largest accumulated attention (ties: smallest (y, x)).
inline StateMatrix init_visual_state(std::uint32_t image_id, const std::map<GridPos, double>& attn_map, std::size_t d) {
    if (attn_map.empty()) throw Error(Errc::EmptyAttnMap, "init_visual_state needs a nonempty attention map");
    // std::map iterates in (y, x) order, so the first strict maximum wins ties.
    auto best = attn_map.begin();
    for (auto it = attn_map.begin(); it != attn_map.end(); ++it) {
        if (it->second > best->second) best = it;
    }
    return {d, VisualDominant{image_id, best->first}};
}

/// S <- sigmoid(entropy)^D * S + alpha_norm^D * k^T v, D = Manhattan distance from the root.
inline void visual_update(StateMatrix& state, std::span<const double> k, std::span<const double> v, double entropy,
                          double alpha_norm, GridPos patch) {
    const auto* vd = std::get_if<VisualDominant>(&state.kind);
    if (vd == nullptr) throw Error(Errc::WrongKind, "visual_update on a non-visual state");
    check_pair(state, k, v);
    if (entropy < 0.0 || !std::isfinite(entropy)) throw Error(Errc::OutOfRange, "entropy must be finite and >= 0");
    if (!(alpha_norm >= 0.0 && alpha_norm <= 1.0)) throw Error(Errc::OutOfRange, "alpha_norm must lie in [0,1]");
    const auto D = static_cast<std::size_t>(manhattan(patch, vd->root));
    decay_and_inject(state.S, int_pow(logistic(entropy), D), int_pow(alpha_norm, D), k, v);
    ++state.absorbed_count;
}

/// Lower median (the average of the two middle values for even sizes).
inline double median(std::vector<double> xs) {
    if (xs.empty()) throw Error(Errc::EmptyVector, "median of empty set");
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// Absorbs exiting entries that are not heavy hitters and whose last entropy reaches the cut.
/// `alpha_norm[i]` is the injection weight for `exiting[i]`. Returns the number absorbed.
inline std::size_t recall_absorb(StateMatrix& state, std::span<const KVEntry> exiting,
                                 std::span<const double> alpha_norm, const std::set<std::uint64_t>& heavy_ids,
                                 double entropy_cut) {
    if (state.is_visual()) throw Error(Errc::WrongKind, "recall_absorb on a visual state");
    if (alpha_norm.size() != exiting.size()) throw Error(Errc::ShapeMismatch, "alpha_norm count != exiting count");
    std::vector<std::size_t> order(exiting.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return exiting[a].meta.position < exiting[b].meta.position;
    });
    std::size_t absorbed = 0;
    for (std::size_t i : order) {
        const auto& e = exiting[i];
        if (heavy_ids.count(e.meta.token_id) != 0 || e.last_entropy < entropy_cut) continue;
        entropy_update(state, e.key, e.value, e.last_entropy, alpha_norm[i]);
        ++absorbed;
    }
    return absorbed;
}

/// Median-cut overload with unit injection weight.
inline std::size_t recall_absorb(StateMatrix& state, std::span<const KVEntry> exiting,
                                 const std::set<std::uint64_t>& heavy_ids) {
    if (exiting.empty()) return 0;
    std::vector<double> h;
    for (const auto& e : exiting) h.push_back(e.last_entropy);
    const std::vector<double> ones(exiting.size(), 1.0);
    return recall_absorb(state, exiting, ones, heavy_ids, median(std::move(h)));
}

/// Two orthogonal scans of one image: row-major and column-major absorption order.
struct ImageMemory {
    StateMatrix by_row;
    StateMatrix by_col;

    static ImageMemory create(std::uint32_t image_id, const std::map<GridPos, double>& attn_map, std::size_t d) {
        StateMatrix s = init_visual_state(image_id, attn_map, d);
        return {s, s};
    }

    std::uint32_t image_id() const { return std::get<VisualDominant>(by_row.kind).image_id; }
    GridPos root() const { return std::get<VisualDominant>(by_row.kind).root; }
    std::size_t byte_size() const noexcept { return by_row.byte_size() + by_col.byte_size(); }
};

struct PatchUpdate {
    const KVEntry* entry = nullptr;
    double alpha_norm = 0.0;
};

/// Feeds one batch of evicted patches of this image into both scans.
inline void absorb_patches(ImageMemory& mem, std::vector<PatchUpdate> patches) {
    auto apply = [](StateMatrix& s, const PatchUpdate& p) {
        visual_update(s, p.entry->key, p.entry->value, p.entry->last_entropy, p.alpha_norm, *p.entry->meta.grid);
    };
    std::stable_sort(patches.begin(), patches.end(), [](const PatchUpdate& a, const PatchUpdate& b) {
        const GridPos ga = *a.entry->meta.grid;
        const GridPos gb = *b.entry->meta.grid;
        return std::pair(ga.y, ga.x) < std::pair(gb.y, gb.x);
    });
    for (const auto& p : patches) apply(mem.by_row, p);
    std::stable_sort(patches.begin(), patches.end(), [](const PatchUpdate& a, const PatchUpdate& b) {
        const GridPos ga = *a.entry->meta.grid;
        const GridPos gb = *b.entry->meta.grid;
        return std::pair(ga.x, ga.y) < std::pair(gb.x, gb.y);
    });
    for (const auto& p : patches) apply(mem.by_col, p);
}

// Snapshot layout, little-endian:
//   u32 d | u8 kind (0 visual, 1 recall) | u32 image_id | i32 root_x | i32 root_y | f64[d*d] row-major | u64 absorbed
namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    std::uint64_t bits = 0;
    if constexpr (std::is_floating_point_v<T>) {
        bits = std::bit_cast<std::uint64_t>(value);
    } else {
        bits = static_cast<std::uint64_t>(static_cast<std::make_unsigned_t<T>>(value));
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw Error(Errc::InvalidArgument, "state snapshot truncated");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
    pos += sizeof(T);
    if constexpr (std::is_floating_point_v<T>) {
        return std::bit_cast<double>(bits);
    } else {
        return static_cast<T>(static_cast<std::make_unsigned_t<T>>(bits));
    }
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const StateMatrix& s) {
    std::vector<std::uint8_t> out;
    out.reserve(21 + s.byte_size() + 8);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.dim()));
    const auto* vd = std::get_if<VisualDominant>(&s.kind);
    detail::put_le<std::uint8_t>(out, vd != nullptr ? 0 : 1);
    detail::put_le<std::uint32_t>(out, vd != nullptr ? vd->image_id : 0);
    detail::put_le<std::int32_t>(out, vd != nullptr ? vd->root.x : 0);
    detail::put_le<std::int32_t>(out, vd != nullptr ? vd->root.y : 0);
    for (double x : s.S.data()) detail::put_le<double>(out, x);
    detail::put_le<std::uint64_t>(out, s.absorbed_count);
    return out;
}

inline StateMatrix deserialize_state(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    const auto d = detail::get_le<std::uint32_t>(bytes, pos);
    const auto tag = detail::get_le<std::uint8_t>(bytes, pos);
    const auto image = detail::get_le<std::uint32_t>(bytes, pos);
    const auto rx = detail::get_le<std::int32_t>(bytes, pos);
    const auto ry = detail::get_le<std::int32_t>(bytes, pos);
    if (tag > 1) throw Error(Errc::InvalidArgument, "unknown state kind tag");
    StateMatrix s(d, tag == 0 ? StateKind{VisualDominant{image, GridPos{rx, ry}}} : StateKind{RecallOriented{}});
    for (auto& x : s.S.data()) x = detail::get_le<double>(bytes, pos);
    s.absorbed_count = detail::get_le<std::uint64_t>(bytes, pos);
    if (pos != bytes.size()) throw Error(Errc::InvalidArgument, "trailing bytes in state snapshot");
    return s;
}

}  // namespace rkv
