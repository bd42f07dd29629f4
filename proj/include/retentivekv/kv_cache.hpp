// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "retentivekv/error.hpp"
#include "retentivekv/numerics.hpp"

namespace rkv {

enum class Modality : std::uint8_t { Visual, Text };

/// Patch coordinate inside an image grid. Ordered row-major: by y, then x.
struct GridPos {
    int x = 0;
    int y = 0;

    friend bool operator==(const GridPos&, const GridPos&) = default;
    friend std::strong_ordering operator<=>(const GridPos& a, const GridPos& b) {
        if (auto c = a.y <=> b.y; c != 0) return c;
        return a.x <=> b.x;
    }
};

inline int manhattan(GridPos a, GridPos b) noexcept { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

struct TokenMeta {
    std::uint64_t token_id = 0;
    Modality modality = Modality::Text;
    std::uint64_t position = 0;
    std::optional<GridPos> grid;
    std::optional<std::uint32_t> image_id;

    bool is_visual() const noexcept { return modality == Modality::Visual; }

    static TokenMeta text(std::uint64_t id, std::uint64_t position) { return {id, Modality::Text, position, {}, {}}; }
    static TokenMeta visual(std::uint64_t id, std::uint64_t position, std::uint32_t image, GridPos g) {
        return {id, Modality::Visual, position, g, image};
    }
};

struct KVEntry {
    TokenMeta meta;
    Vector key;
    Vector value;
    double accum_attn = 0.0;    // running sum of softmax weight received
    double last_entropy = 0.0;  // latest cross-modal entropy contribution (nats)

    std::uint64_t id() const noexcept { return meta.token_id; }
};

struct Attention {
    Vector output;
    Vector weights;
};

/// Unnormalized attention over a slice of the cache, mergeable by log-sum-exp.
struct PartialAttention {
    Vector weighted_sum;  // sum_i exp(logit_i - max_logit) * v_i
    double max_logit = -std::numeric_limits<double>::infinity();
    double denom = 0.0;  // sum_i exp(logit_i - max_logit)
};

inline PartialAttention merge(const PartialAttention& a, const PartialAttention& b) {
    if (a.denom == 0.0) return b;
    if (b.denom == 0.0) return a;
    if (a.weighted_sum.size() != b.weighted_sum.size()) throw Error(Errc::ShapeMismatch, "partial attention dims");
    PartialAttention out;
    out.max_logit = std::max(a.max_logit, b.max_logit);
    const double sa = std::exp(a.max_logit - out.max_logit);
    const double sb = std::exp(b.max_logit - out.max_logit);
    out.denom = a.denom * sa + b.denom * sb;
    out.weighted_sum.resize(a.weighted_sum.size());
    for (std::size_t i = 0; i < out.weighted_sum.size(); ++i) {
        out.weighted_sum[i] = a.weighted_sum[i] * sa + b.weighted_sum[i] * sb;
    }
    return out;
}

inline Vector finalize(const PartialAttention& p) {
    if (p.denom == 0.0) throw Error(Errc::EmptyCache, "finalize of empty partial attention");
    Vector out = p.weighted_sum;
    for (auto& x : out) x /= p.denom;
    return out;
}

/// Single-head discrete KV cache. Entries are kept in ascending token_id order.
class Cache {
public:
    explicit Cache(std::size_t head_dim) : m_head_dim(head_dim) {
        if (head_dim == 0) throw Error(Errc::InvalidArgument, "head_dim must be positive");
    }

    std::size_t head_dim() const noexcept { return m_head_dim; }
    std::size_t size() const noexcept { return m_entries.size(); }
    bool empty() const noexcept { return m_entries.empty(); }
    std::span<const KVEntry> entries() const noexcept { return m_entries; }
    const KVEntry& operator[](std::size_t i) const { return m_entries[i]; }

    void append(KVEntry entry) {
        if (entry.key.size() != m_head_dim || entry.value.size() != m_head_dim) {
            throw Error(Errc::ShapeMismatch, "entry dims do not match head_dim");
        }
        if (!m_entries.empty()) {
            const auto& last = m_entries.back().meta;
            if (entry.meta.token_id <= last.token_id) {
                throw Error(Errc::DuplicateToken, "token id " + std::to_string(entry.meta.token_id) +
                                                      " not greater than last id " + std::to_string(last.token_id));
            }
            if (entry.meta.position <= last.position) {
                throw Error(Errc::InvalidArgument, "positions must strictly increase with token id");
            }
        }
        const bool has_grid = entry.meta.grid.has_value() && entry.meta.image_id.has_value();
        const bool no_grid = !entry.meta.grid.has_value() && !entry.meta.image_id.has_value();
        if (entry.meta.is_visual() ? !has_grid : !no_grid) {
            throw Error(Errc::InvalidArgument, "visual tokens need grid and image_id; text tokens must have neither");
        }
        if (!all_finite(entry.key) || !all_finite(entry.value)) {
            throw Error(Errc::NonFinite, "entry key/value not finite");
        }
        m_entries.push_back(std::move(entry));
    }

    Attention attend(std::span<const double> q) const {
        if (m_entries.empty()) throw Error(Errc::EmptyCache, "attend on empty cache");
        if (q.size() != m_head_dim) throw Error(Errc::ShapeMismatch, "query length != head_dim");
        const double scale = 1.0 / std::sqrt(static_cast<double>(m_head_dim));
        Vector logits(m_entries.size());
        for (std::size_t i = 0; i < m_entries.size(); ++i) logits[i] = dot(q, m_entries[i].key) * scale;
        Attention out;
        out.weights = softmax(logits);
        out.output.assign(m_head_dim, 0.0);
        for (std::size_t i = 0; i < m_entries.size(); ++i) {
            const double w = out.weights[i];
            const auto& v = m_entries[i].value;
            for (std::size_t j = 0; j < m_head_dim; ++j) out.output[j] += w * v[j];
        }
        return out;
    }

    /// Attention restricted to entries [begin, end), left unnormalized for merging.
    PartialAttention attend_partial(std::span<const double> q, std::size_t begin, std::size_t end) const {
        if (q.size() != m_head_dim) throw Error(Errc::ShapeMismatch, "query length != head_dim");
        if (begin > end || end > m_entries.size()) throw Error(Errc::OutOfRange, "partial range out of bounds");
        PartialAttention p;
        p.weighted_sum.assign(m_head_dim, 0.0);
        if (begin == end) return p;
        const double scale = 1.0 / std::sqrt(static_cast<double>(m_head_dim));
        Vector logits;
        for (std::size_t i = begin; i < end; ++i) logits.push_back(dot(q, m_entries[i].key) * scale);
        p.max_logit = *std::max_element(logits.begin(), logits.end());
        for (std::size_t i = begin; i < end; ++i) {
            const double e = std::exp(logits[i - begin] - p.max_logit);
            p.denom += e;
            for (std::size_t j = 0; j < m_head_dim; ++j) p.weighted_sum[j] += e * m_entries[i].value[j];
        }
        return p;
    }

    void accumulate(std::span<const double> weights) {
        if (weights.size() != m_entries.size()) throw Error(Errc::ShapeMismatch, "weights length != cache size");
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] < 0.0) throw Error(Errc::NegativeInput, "negative attention weight");
        }
        for (std::size_t i = 0; i < weights.size(); ++i) m_entries[i].accum_attn += weights[i];
    }

    void set_last_entropy(std::size_t index, double h) { m_entries.at(index).last_entropy = h; }

    /// Removes the given ids; the removed entries come back in sequence order.
    std::vector<KVEntry> evict(const std::set<std::uint64_t>& ids) {
        for (auto id : ids) {
            if (!contains(id)) throw Error(Errc::UnknownToken, "evict: unknown token id " + std::to_string(id));
        }
        std::vector<KVEntry> kept;
        std::vector<KVEntry> evicted;
        kept.reserve(m_entries.size() - ids.size());
        evicted.reserve(ids.size());
        for (auto& e : m_entries) {
            (ids.count(e.meta.token_id) ? evicted : kept).push_back(std::move(e));
        }
        m_entries = std::move(kept);
        return evicted;
    }

    bool contains(std::uint64_t id) const {
        return std::binary_search(m_entries.begin(), m_entries.end(), id,
                                  [](const auto& a, const auto& b) { return key_of(a) < key_of(b); });
    }

    std::size_t memory_bytes() const noexcept { return entry_bytes(m_head_dim) * m_entries.size(); }

    static constexpr std::size_t entry_bytes(std::size_t head_dim) noexcept { return 2 * head_dim * sizeof(double); }

private:
    static std::uint64_t key_of(const KVEntry& e) { return e.meta.token_id; }
    static std::uint64_t key_of(std::uint64_t id) { return id; }

    std::size_t m_head_dim;
    std::vector<KVEntry> m_entries;
};

}  // namespace rkv
