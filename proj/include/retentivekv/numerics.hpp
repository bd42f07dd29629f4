// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "retentivekv/error.hpp"

namespace rkv {

using Vector = std::vector<double>;

inline constexpr double kLayerNormEpsilon = 1e-6;

/// Dense row-major matrix of 64-bit reals.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : m_rows(rows), m_cols(cols), m_data(rows * cols, 0.0) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
        if (m_data.size() != rows * cols) {
            throw Error(Errc::ShapeMismatch, "matrix element count does not match rows*cols");
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return m_rows; }
    std::size_t cols() const noexcept { return m_cols; }

    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    std::span<double> data() noexcept { return m_data; }
    std::span<const double> data() const noexcept { return m_data; }
    std::span<const double> row(std::size_t r) const { return std::span<const double>(m_data).subspan(r * m_cols, m_cols); }

    Matrix& operator*=(double s) {
        for (auto& x : m_data) x *= s;
        return *this;
    }

    Matrix& operator+=(const Matrix& other) {
        if (other.m_rows != m_rows || other.m_cols != m_cols) {
            throw Error(Errc::ShapeMismatch, "matrix sum shape mismatch");
        }
        for (std::size_t i = 0; i < m_data.size(); ++i) m_data[i] += other.m_data[i];
        return *this;
    }

    bool is_zero() const noexcept {
        return std::all_of(m_data.begin(), m_data.end(), [](double x) { return x == 0.0; });
    }

    bool all_finite() const noexcept {
        return std::all_of(m_data.begin(), m_data.end(), [](double x) { return std::isfinite(x); });
    }

    double max_abs() const noexcept {
        double m = 0.0;
        for (double x : m_data) m = std::max(m, std::abs(x));
        return m;
    }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(Errc::ShapeMismatch, "max_abs_diff shape mismatch");
    }
    double m = 0.0;
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
    return m;
}

inline bool all_finite(std::span<const double> x) noexcept {
    return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(Errc::ShapeMismatch, "dot length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(Errc::ShapeMismatch, "distance length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double logistic(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Vector softmax(std::span<const double> x) {
    if (x.empty()) throw Error(Errc::EmptyVector, "softmax of empty vector");
    if (!all_finite(x)) throw Error(Errc::NonFinite, "softmax input contains NaN/Inf");
    const double m = *std::max_element(x.begin(), x.end());
    Vector out(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - m);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

/// Layer normalization without affine parameters. A zero-variance input maps to the zero vector.
inline Vector layer_norm(std::span<const double> x, double epsilon = kLayerNormEpsilon) {
    if (x.size() < 2) throw Error(Errc::DegenerateNorm, "layer_norm needs at least two elements");
    if (epsilon < 0.0) throw Error(Errc::InvalidArgument, "layer_norm epsilon must be nonnegative");
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    Vector out(x.size(), 0.0);
    if (var == 0.0) return out;
    const double inv = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv;
    return out;
}

inline Matrix outer(std::span<const double> k, std::span<const double> v) {
    if (k.size() != v.size()) throw Error(Errc::ShapeMismatch, "outer product length mismatch");
    Matrix m(k.size(), v.size());
    for (std::size_t i = 0; i < k.size(); ++i) {
        for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = k[i] * v[j];
    }
    return m;
}

/// Row vector times matrix.
inline Vector vec_mat(std::span<const double> q, const Matrix& s) {
    if (q.size() != s.rows()) throw Error(Errc::ShapeMismatch, "vec_mat: q length != matrix rows");
    Vector out(s.cols(), 0.0);
    for (std::size_t i = 0; i < s.rows(); ++i) {
        const double qi = q[i];
        if (qi == 0.0) continue;
        for (std::size_t j = 0; j < s.cols(); ++j) out[j] += qi * s(i, j);
    }
    return out;
}

/// S <- decay * S + inject * outer(k, v), fused to avoid a temporary.
inline void decay_and_inject(Matrix& s, double decay, double inject, std::span<const double> k,
                             std::span<const double> v) {
    if (k.size() != s.rows() || v.size() != s.cols()) {
        throw Error(Errc::ShapeMismatch, "state update dims do not match state");
    }
    for (std::size_t i = 0; i < s.rows(); ++i) {
        const double ki = inject * k[i];
        for (std::size_t j = 0; j < s.cols(); ++j) s(i, j) = decay * s(i, j) + ki * v[j];
    }
}

/// splitmix64 finalizer; used for seeding and deriving independent sub-seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
    std::uint64_t s = base ^ (0xD1B54A32D192ED03ULL * (index + 1));
    return splitmix64(s);
}

/// Deterministic random stream: xoshiro256** seeded from a 64-bit seed via splitmix64.
/// The raw 64-bit output is bit-identical on every platform; uniform() uses the top 53 bits.
class RngStream {
public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t seed) : m_seed(seed) {
        std::uint64_t sm = seed;
        for (auto& word : m_state) word = splitmix64(sm);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    std::uint64_t seed() const noexcept { return m_seed; }

    result_type operator()() noexcept { return next_u64(); }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(m_state[1] * 5, 7) * 9;
        const std::uint64_t t = m_state[1] << 17;
        m_state[2] ^= m_state[0];
        m_state[3] ^= m_state[1];
        m_state[1] ^= m_state[2];
        m_state[0] ^= m_state[3];
        m_state[2] ^= t;
        m_state[3] = rotl(m_state[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n), rejection sampled.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw Error(Errc::InvalidArgument, "below(0)");
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (one draw per call, no caching).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    Vector gaussian(std::size_t d) {
        Vector v(d);
        for (auto& x : v) x = normal();
        return v;
    }

    Vector unit_vector(std::size_t d) {
        for (;;) {
            Vector v = gaussian(d);
            const double n = l2_norm(v);
            if (n > 1e-12) {
                for (auto& x : v) x /= n;
                return v;
            }
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

    std::uint64_t m_seed;
    std::uint64_t m_state[4]{};
};

}  // namespace rkv
