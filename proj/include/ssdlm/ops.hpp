#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ssdlm/tensor.hpp"

// Plain (non-recorded) dense kernels. The autodiff tape and the decode paths
// both run on these; every function validates operand shapes and surfaces
// non-finite outputs instead of propagating them.

namespace ssdlm::ops {

template <typename Real>
void require_rank(const Tensor<Real>& t, std::size_t rank, const char* where) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(where) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
    }
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0), k = a.extent(1), r = b.extent(1);
    Tensor<Real> c({m, r});
    const Real* ad = a.data();
    const Real* bd = b.data();
    Real* cd = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        Real* crow = cd + i * r;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const Real aik = ad[i * k + kk];
            const Real* brow = bd + kk * r;
            for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
    }
    ensure_finite(c, "matmul");
    return c;
}

/// a (MxK) times b^T (b given as RxK) -> MxR.
template <typename Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    if (a.extent(1) != b.extent(1)) {
        throw ShapeError("matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()) + " (transposed)");
    }
    const std::size_t m = a.extent(0), k = a.extent(1), r = b.extent(0);
    Tensor<Real> c({m, r});
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a.data() + i * k;
        for (std::size_t j = 0; j < r; ++j) {
            const Real* brow = b.data() + j * k;
            Real acc = 0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            c.at(i, j) = acc;
        }
    }
    ensure_finite(c, "matmul_nt");
    return c;
}

/// Row vector (K) times matrix (KxR) -> R.
template <typename Real>
Tensor<Real> vecmat(const Tensor<Real>& x, const Tensor<Real>& a) {
    require_rank(x, 1, "vecmat");
    require_rank(a, 2, "vecmat");
    if (x.extent(0) != a.extent(0)) {
        throw ShapeError("vecmat: inner dimensions disagree: " + shape_str(x.shape()) +
                         " vs " + shape_str(a.shape()));
    }
    const std::size_t k = a.extent(0), r = a.extent(1);
    Tensor<Real> y({r});
    for (std::size_t kk = 0; kk < k; ++kk) {
        const Real xv = x[kk];
        const Real* arow = a.data() + kk * r;
        for (std::size_t j = 0; j < r; ++j) y[j] += xv * arow[j];
    }
    ensure_finite(y, "vecmat");
    return y;
}

template <typename Real>
Tensor<Real> outer(const Tensor<Real>& u, const Tensor<Real>& v) {
    require_rank(u, 1, "outer");
    require_rank(v, 1, "outer");
    const std::size_t p = u.extent(0), n = v.extent(0);
    Tensor<Real> z({p, n});
    for (std::size_t i = 0; i < p; ++i) {
        const Real ui = u[i];
        for (std::size_t j = 0; j < n; ++j) z.at(i, j) = ui * v[j];
    }
    ensure_finite(z, "outer");
    return z;
}

template <typename Real, typename Fn>
Tensor<Real> unary_map(const Tensor<Real>& a, Fn fn, const char* where) {
    Tensor<Real> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
    ensure_finite(out, where);
    return out;
}

template <typename Real, typename Fn>
Tensor<Real> binary_map(const Tensor<Real>& a, const Tensor<Real>& b, Fn fn, const char* where) {
    require_same_shape(a, b, where);
    Tensor<Real> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
    ensure_finite(out, where);
    return out;
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary_map(a, b, [](Real x, Real y) { return x + y; }, "add");
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary_map(a, b, [](Real x, Real y) { return x - y; }, "sub");
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary_map(a, b, [](Real x, Real y) { return x * y; }, "mul");
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
    return unary_map(a, [c](Real x) { return c * x; }, "scale");
}

// Strictly inside (0,1): extreme logits would otherwise round to the
// endpoints, and downstream decay algebra relies on a_t never reaching them.
template <typename Real>
Real sigmoid_scalar(Real x) {
    Real s;
    if (x >= 0) {
        s = Real(1) / (Real(1) + std::exp(-x));
    } else {
        const Real e = std::exp(x);
        s = e / (Real(1) + e);
    }
    constexpr Real lo = std::numeric_limits<Real>::min();
    constexpr Real hi = Real(1) - std::numeric_limits<Real>::epsilon() / 2;
    return std::min(hi, std::max(lo, s));
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
    return unary_map(a, [](Real x) { return sigmoid_scalar(x); }, "sigmoid");
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& a) {
    return unary_map(a, [](Real x) { return std::exp(x); }, "exp");
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& a) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a[i] > Real(0))) {
            throw DomainError("log: non-positive value " + std::to_string(double(a[i])) +
                              " at flat index " + std::to_string(i));
        }
    }
    return unary_map(a, [](Real x) { return std::log(x); }, "log");
}

/// Matrix (TxC) plus a length-C vector broadcast over rows.
template <typename Real>
Tensor<Real> add_row(const Tensor<Real>& m, const Tensor<Real>& v) {
    require_rank(m, 2, "add_row");
    require_rank(v, 1, "add_row");
    if (m.extent(1) != v.extent(0)) {
        throw ShapeError("add_row: row width mismatch " + shape_str(m.shape()) + " vs " +
                         shape_str(v.shape()));
    }
    Tensor<Real> out(m.shape());
    const std::size_t rows = m.extent(0), cols = m.extent(1);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = m.at(i, j) + v[j];
    }
    ensure_finite(out, "add_row");
    return out;
}

/// Inclusive prefix sum of a 1-D tensor (column vectors Tx1 also accepted).
template <typename Real>
Tensor<Real> cumsum(const Tensor<Real>& a) {
    if (a.rank() != 1 && !(a.rank() == 2 && a.extent(1) == 1)) {
        throw ShapeError("cumsum: expected vector, got " + shape_str(a.shape()));
    }
    Tensor<Real> out(a.shape());
    Real acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i];
        out[i] = acc;
    }
    ensure_finite(out, "cumsum");
    return out;
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& logits) {
    require_rank(logits, 1, "softmax");
    if (logits.size() == 0) throw ShapeError("softmax: empty input");
    Real mx = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
    if (!std::isfinite(mx)) {
        throw DomainError("softmax: no finite logit to normalize against");
    }
    Tensor<Real> p(logits.shape());
    Real sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (std::size_t i = 0; i < p.size(); ++i) p[i] /= sum;
    return p;
}

template <typename Real>
Real logsumexp_row(const Real* row, std::size_t n) {
    Real mx = row[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    Real sum = 0;
    for (std::size_t i = 0; i < n; ++i) sum += std::exp(row[i] - mx);
    return mx + std::log(sum);
}

/// Mean over positions of -log softmax(logits_t)[target_t].
template <typename Real>
Real cross_entropy(const Tensor<Real>& logits, std::span<const int> targets) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t t = logits.extent(0), v = logits.extent(1);
    if (targets.size() != t) {
        throw ShapeError("cross_entropy: " + std::to_string(t) + " logit rows vs " +
                         std::to_string(targets.size()) + " targets");
    }
    Real total = 0;
    for (std::size_t i = 0; i < t; ++i) {
        const int tgt = targets[i];
        if (tgt < 0 || std::size_t(tgt) >= v) {
            throw DomainError("cross_entropy: target id " + std::to_string(tgt) +
                              " out of range for vocab " + std::to_string(v));
        }
        const Real* row = logits.data() + i * v;
        total += logsumexp_row(row, v) - row[tgt];
    }
    const Real loss = total / Real(t);
    if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
    return loss;
}

inline constexpr double kRmsNormEps = 1e-8;

/// Row-wise RMS normalization with a learned per-column gain.
template <typename Real>
Tensor<Real> rms_norm(const Tensor<Real>& x, const Tensor<Real>& gain) {
    require_rank(x, 2, "rms_norm");
    require_rank(gain, 1, "rms_norm");
    if (x.extent(1) != gain.extent(0)) {
        throw ShapeError("rms_norm: width mismatch " + shape_str(x.shape()) + " vs gain " +
                         shape_str(gain.shape()));
    }
    const std::size_t rows = x.extent(0), d = x.extent(1);
    Tensor<Real> out(x.shape());
    for (std::size_t i = 0; i < rows; ++i) {
        const Real* row = x.data() + i * d;
        Real ms = 0;
        for (std::size_t j = 0; j < d; ++j) ms += row[j] * row[j];
        const Real inv = Real(1) / std::sqrt(ms / Real(d) + Real(kRmsNormEps));
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = gain[j] * row[j] * inv;
    }
    ensure_finite(out, "rms_norm");
    return out;
}

/// rms_norm for a single vector.
template <typename Real>
Tensor<Real> rms_norm_vec(const Tensor<Real>& x, const Tensor<Real>& gain) {
    require_rank(x, 1, "rms_norm_vec");
    require_same_shape(x, gain, "rms_norm_vec");
    const std::size_t d = x.extent(0);
    Real ms = 0;
    for (std::size_t j = 0; j < d; ++j) ms += x[j] * x[j];
    const Real inv = Real(1) / std::sqrt(ms / Real(d) + Real(kRmsNormEps));
    Tensor<Real> out({d});
    for (std::size_t j = 0; j < d; ++j) out[j] = gain[j] * x[j] * inv;
    ensure_finite(out, "rms_norm_vec");
    return out;
}

template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& m, std::size_t c0, std::size_t c1) {
    require_rank(m, 2, "slice_cols");
    if (c0 >= c1 || c1 > m.extent(1)) {
        throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of range for " + shape_str(m.shape()));
    }
    const std::size_t rows = m.extent(0), w = c1 - c0;
    Tensor<Real> out({rows, w});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < w; ++j) out.at(i, j) = m.at(i, c0 + j);
    }
    return out;
}

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& m, std::size_t r0, std::size_t r1) {
    if (m.rank() == 0 || r0 >= r1 || r1 > m.extent(0)) {
        throw ShapeError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") out of range for " + shape_str(m.shape()));
    }
    Shape out_shape = m.shape();
    out_shape[0] = r1 - r0;
    const std::size_t row_sz = m.size() / m.extent(0);
    Tensor<Real> out(out_shape);
    std::copy(m.data() + r0 * row_sz, m.data() + r1 * row_sz, out.data());
    return out;
}

/// Row i of a matrix as a vector.
template <typename Real>
Tensor<Real> row(const Tensor<Real>& m, std::size_t i) {
    require_rank(m, 2, "row");
    if (i >= m.extent(0)) {
        throw ShapeError("row: index " + std::to_string(i) + " out of range for " +
                         shape_str(m.shape()));
    }
    const std::size_t w = m.extent(1);
    Tensor<Real> out({w});
    std::copy(m.data() + i * w, m.data() + (i + 1) * w, out.data());
    return out;
}

}  // namespace ssdlm::ops
