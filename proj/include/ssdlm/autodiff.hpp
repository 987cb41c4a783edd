#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssdlm/ops.hpp"
#include "ssdlm/tensor.hpp"

namespace ssdlm {

/// Handle to a node on a Tape.
struct NodeId {
    std::int32_t v = -1;
    bool valid() const { return v >= 0; }
};

enum class OpKind : std::uint8_t {
    Leaf,
    MatMul,
    MatMulNT,
    Add,
    Sub,
    Mul,
    Scale,
    Sigmoid,
    Exp,
    Log,
    AddRow,
    SliceCols,
    SliceRows,
    Reshape,
    Cumsum,
    TriDecay,
    Outer,
    OuterRows,
    StateReadout,
    RmsNorm,
    EmbedRows,
    ConcatRows,
    ConcatCols,
    Softmax,
    CausalSoftmax,
    CrossEntropy,
    Sum,
};

namespace detail {

// dst += a * b, all row-major rank-2.
template <typename Real>
void acc_matmul_nn(Tensor<Real>& dst, const Tensor<Real>& a, const Tensor<Real>& b) {
    const std::size_t m = a.extent(0), k = a.extent(1), r = b.extent(1);
    for (std::size_t i = 0; i < m; ++i) {
        Real* drow = dst.data() + i * r;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const Real aik = a[i * k + kk];
            const Real* brow = b.data() + kk * r;
            for (std::size_t j = 0; j < r; ++j) drow[j] += aik * brow[j];
        }
    }
}

// dst += a * b^T with b given as RxK.
template <typename Real>
void acc_matmul_nt(Tensor<Real>& dst, const Tensor<Real>& a, const Tensor<Real>& b) {
    const std::size_t m = a.extent(0), k = a.extent(1), r = b.extent(0);
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a.data() + i * k;
        for (std::size_t j = 0; j < r; ++j) {
            const Real* brow = b.data() + j * k;
            Real acc = 0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            dst[i * r + j] += acc;
        }
    }
}

// dst += a^T * b with a given as MxK, b MxR, dst KxR.
template <typename Real>
void acc_matmul_tn(Tensor<Real>& dst, const Tensor<Real>& a, const Tensor<Real>& b) {
    const std::size_t m = a.extent(0), k = a.extent(1), r = b.extent(1);
    for (std::size_t i = 0; i < m; ++i) {
        const Real* brow = b.data() + i * r;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const Real aik = a[i * k + kk];
            Real* drow = dst.data() + kk * r;
            for (std::size_t j = 0; j < r; ++j) drow[j] += aik * brow[j];
        }
    }
}

}  // namespace detail

/// Record-on-forward / replay-reversed autodiff tape over Tensor values.
///
/// Nodes are appended in evaluation order, so the recorded graph is acyclic
/// and a single reverse sweep visits each node exactly once. One tape per
/// training step; values are immutable once recorded.
template <typename Real>
class Tape {
public:
    NodeId leaf(Tensor<Real> value) {
        ensure_finite(value, "leaf");
        return push(OpKind::Leaf, {}, {}, std::move(value));
    }

    NodeId matmul(NodeId a, NodeId b) {
        return push(OpKind::MatMul, a, b, ops::matmul(value(a), value(b)));
    }

    NodeId matmul_nt(NodeId a, NodeId b) {
        return push(OpKind::MatMulNT, a, b, ops::matmul_nt(value(a), value(b)));
    }

    NodeId add(NodeId a, NodeId b) {
        return push(OpKind::Add, a, b, ops::add(value(a), value(b)));
    }

    NodeId sub(NodeId a, NodeId b) {
        return push(OpKind::Sub, a, b, ops::sub(value(a), value(b)));
    }

    NodeId mul(NodeId a, NodeId b) {
        return push(OpKind::Mul, a, b, ops::mul(value(a), value(b)));
    }

    NodeId scale(NodeId a, Real c) {
        NodeId id = push(OpKind::Scale, a, {}, ops::scale(value(a), c));
        node(id).c = c;
        return id;
    }

    NodeId sigmoid(NodeId a) { return push(OpKind::Sigmoid, a, {}, ops::sigmoid(value(a))); }
    NodeId exp(NodeId a) { return push(OpKind::Exp, a, {}, ops::exp(value(a))); }
    NodeId log(NodeId a) { return push(OpKind::Log, a, {}, ops::log(value(a))); }

    NodeId add_row(NodeId m, NodeId v) {
        return push(OpKind::AddRow, m, v, ops::add_row(value(m), value(v)));
    }

    NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
        NodeId id = push(OpKind::SliceCols, a, {}, ops::slice_cols(value(a), c0, c1));
        node(id).i0 = c0;
        node(id).i1 = c1;
        return id;
    }

    NodeId slice_rows(NodeId a, std::size_t r0, std::size_t r1) {
        NodeId id = push(OpKind::SliceRows, a, {}, ops::slice_rows(value(a), r0, r1));
        node(id).i0 = r0;
        node(id).i1 = r1;
        return id;
    }

    NodeId reshape(NodeId a, Shape shape) {
        const Tensor<Real>& in = value(a);
        if (shape_numel(shape) != in.size()) {
            throw ShapeError("reshape: " + shape_str(in.shape()) + " to " + shape_str(shape) +
                             " changes element count");
        }
        Tensor<Real> out(std::move(shape),
                         std::vector<Real>(in.data(), in.data() + in.size()));
        return push(OpKind::Reshape, a, {}, std::move(out));
    }

    NodeId cumsum(NodeId a) { return push(OpKind::Cumsum, a, {}, ops::cumsum(value(a))); }

    /// Lower-triangular decay matrix from inclusive log-decay prefix sums:
    /// out[j][i] = exp(s_j - s_i) for i <= j, 0 above the diagonal.
    /// Unit diagonal by construction; underflow to exact 0 is accepted.
    NodeId tri_decay(NodeId s) {
        const Tensor<Real>& sv = value(s);
        if (sv.rank() != 1 && !(sv.rank() == 2 && sv.extent(1) == 1)) {
            throw ShapeError("tri_decay: expected vector, got " + shape_str(sv.shape()));
        }
        const std::size_t t = sv.size();
        Tensor<Real> m({t, t});
        for (std::size_t j = 0; j < t; ++j) {
            for (std::size_t i = 0; i < j; ++i) m.at(j, i) = std::exp(sv[j] - sv[i]);
            m.at(j, j) = Real(1);
        }
        ensure_finite(m, "tri_decay");
        return push(OpKind::TriDecay, s, {}, std::move(m));
    }

    NodeId outer(NodeId u, NodeId v) {
        return push(OpKind::Outer, u, v, ops::outer(value(u), value(v)));
    }

    /// Row-wise outer products, flattened: out[t][p*N+n] = u[t][p] * b[t][n].
    NodeId outer_rows(NodeId u, NodeId b) {
        const Tensor<Real>& uv = value(u);
        const Tensor<Real>& bv = value(b);
        ops::require_rank(uv, 2, "outer_rows");
        ops::require_rank(bv, 2, "outer_rows");
        if (uv.extent(0) != bv.extent(0)) {
            throw ShapeError("outer_rows: row count mismatch " + shape_str(uv.shape()) +
                             " vs " + shape_str(bv.shape()));
        }
        const std::size_t t = uv.extent(0), p = uv.extent(1), n = bv.extent(1);
        Tensor<Real> z({t, p * n});
        for (std::size_t s = 0; s < t; ++s) {
            Real* zrow = z.data() + s * p * n;
            for (std::size_t i = 0; i < p; ++i) {
                const Real ui = uv.at(s, i);
                for (std::size_t j = 0; j < n; ++j) zrow[i * n + j] = ui * bv.at(s, j);
            }
        }
        ensure_finite(z, "outer_rows");
        NodeId id = push(OpKind::OuterRows, u, b, std::move(z));
        node(id).i0 = p;
        node(id).i1 = n;
        return id;
    }

    /// Per-row readout of a flattened PxN state: out[t][p] = sum_n h[t][p*N+n] * c[t][n].
    NodeId state_readout(NodeId h, NodeId c, std::size_t p, std::size_t n) {
        const Tensor<Real>& hv = value(h);
        const Tensor<Real>& cv = value(c);
        ops::require_rank(hv, 2, "state_readout");
        ops::require_rank(cv, 2, "state_readout");
        if (hv.extent(0) != cv.extent(0) || hv.extent(1) != p * n || cv.extent(1) != n) {
            throw ShapeError("state_readout: got state " + shape_str(hv.shape()) +
                             ", kernel " + shape_str(cv.shape()) + " for P=" +
                             std::to_string(p) + " N=" + std::to_string(n));
        }
        const std::size_t t = hv.extent(0);
        Tensor<Real> y({t, p});
        for (std::size_t s = 0; s < t; ++s) {
            const Real* hrow = hv.data() + s * p * n;
            const Real* crow = cv.data() + s * n;
            for (std::size_t i = 0; i < p; ++i) {
                Real acc = 0;
                for (std::size_t j = 0; j < n; ++j) acc += hrow[i * n + j] * crow[j];
                y.at(s, i) = acc;
            }
        }
        ensure_finite(y, "state_readout");
        NodeId id = push(OpKind::StateReadout, h, c, std::move(y));
        node(id).i0 = p;
        node(id).i1 = n;
        return id;
    }

    NodeId rms_norm(NodeId x, NodeId gain) {
        const Tensor<Real>& xv = value(x);
        const Tensor<Real>& gv = value(gain);
        Tensor<Real> out = ops::rms_norm(xv, gv);
        const std::size_t rows = xv.extent(0), d = xv.extent(1);
        Tensor<Real> inv({rows});
        for (std::size_t i = 0; i < rows; ++i) {
            const Real* rp = xv.data() + i * d;
            Real ms = 0;
            for (std::size_t j = 0; j < d; ++j) ms += rp[j] * rp[j];
            inv[i] = Real(1) / std::sqrt(ms / Real(d) + Real(ops::kRmsNormEps));
        }
        NodeId id = push(OpKind::RmsNorm, x, gain, std::move(out));
        node(id).aux = std::move(inv);
        return id;
    }

    NodeId embed_rows(NodeId table, std::span<const int> ids) {
        const Tensor<Real>& tv = value(table);
        ops::require_rank(tv, 2, "embed_rows");
        const std::size_t v = tv.extent(0), d = tv.extent(1);
        Tensor<Real> out({ids.size(), d});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const int id = ids[i];
            if (id < 0 || std::size_t(id) >= v) {
                throw DomainError("embed_rows: token id " + std::to_string(id) +
                                  " out of range for vocab " + std::to_string(v));
            }
            std::copy(tv.data() + id * d, tv.data() + (id + 1) * d, out.data() + i * d);
        }
        NodeId nid = push(OpKind::EmbedRows, table, {}, std::move(out));
        node(nid).ids.assign(ids.begin(), ids.end());
        return nid;
    }

    NodeId concat_rows(std::span<const NodeId> parts) {
        return concat(parts, /*axis0=*/true);
    }

    NodeId concat_cols(std::span<const NodeId> parts) {
        return concat(parts, /*axis0=*/false);
    }

    NodeId softmax(NodeId a) { return push(OpKind::Softmax, a, {}, ops::softmax(value(a))); }

    /// Row-t softmax over columns 0..t of a TxT score matrix; columns above
    /// the diagonal are zero.
    NodeId causal_softmax(NodeId scores) {
        const Tensor<Real>& sv = value(scores);
        ops::require_rank(sv, 2, "causal_softmax");
        if (sv.extent(0) != sv.extent(1)) {
            throw ShapeError("causal_softmax: expected square scores, got " +
                             shape_str(sv.shape()));
        }
        const std::size_t t = sv.extent(0);
        Tensor<Real> p({t, t});
        for (std::size_t i = 0; i < t; ++i) {
            const Real* srow = sv.data() + i * t;
            Real mx = srow[0];
            for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, srow[j]);
            Real sum = 0;
            Real* prow = p.data() + i * t;
            for (std::size_t j = 0; j <= i; ++j) {
                prow[j] = std::exp(srow[j] - mx);
                sum += prow[j];
            }
            for (std::size_t j = 0; j <= i; ++j) prow[j] /= sum;
        }
        ensure_finite(p, "causal_softmax");
        return push(OpKind::CausalSoftmax, scores, {}, std::move(p));
    }

    /// Scalar mean cross-entropy; caches the softmax rows for the backward pass.
    NodeId cross_entropy(NodeId logits, std::span<const int> targets) {
        const Tensor<Real>& lv = value(logits);
        const Real loss = ops::cross_entropy(lv, targets);
        const std::size_t t = lv.extent(0), v = lv.extent(1);
        Tensor<Real> probs({t, v});
        for (std::size_t i = 0; i < t; ++i) {
            Tensor<Real> p = ops::softmax(ops::row(lv, i));
            std::copy(p.data(), p.data() + v, probs.data() + i * v);
        }
        NodeId id = push(OpKind::CrossEntropy, logits, {}, Tensor<Real>::scalar(loss));
        node(id).ids.assign(targets.begin(), targets.end());
        node(id).aux = std::move(probs);
        return id;
    }

    NodeId sum(NodeId a) {
        const Tensor<Real>& av = value(a);
        Real acc = 0;
        for (std::size_t i = 0; i < av.size(); ++i) acc += av[i];
        if (!std::isfinite(acc)) throw NumericError("sum: non-finite result");
        return push(OpKind::Sum, a, {}, Tensor<Real>::scalar(acc));
    }

    const Tensor<Real>& value(NodeId id) const { return nodes_[check(id)].value; }

    /// Gradient of the last backward() root with respect to node `id`.
    const Tensor<Real>& grad(NodeId id) const {
        const Node& n = nodes_[check(id)];
        if (!n.grad_ready) throw NumericError("grad: backward() has not run over this node");
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    /// Reverse sweep seeding d(root)/d(root) = 1. Root must be scalar-valued.
    void backward(NodeId root) {
        const std::size_t ri = check(root);
        if (nodes_[ri].value.size() != 1) {
            throw ShapeError("backward: root has shape " +
                             shape_str(nodes_[ri].value.shape()) + ", expected scalar");
        }
        for (Node& n : nodes_) {
            n.grad = Tensor<Real>::zeros(n.value.shape());
            n.grad_ready = true;
        }
        nodes_[ri].grad[0] = Real(1);
        for (std::size_t idx = nodes_.size(); idx-- > 0;) {
            propagate(nodes_[idx]);
        }
    }

private:
    struct Node {
        OpKind kind = OpKind::Leaf;
        NodeId a{};
        NodeId b{};
        std::size_t i0 = 0, i1 = 0;  // op parameters: slice bounds, P/N dims
        Real c = 0;                  // scale constant
        std::vector<int> ids;        // token ids / targets
        std::vector<NodeId> parts;   // concat inputs
        Tensor<Real> value;
        Tensor<Real> grad;
        Tensor<Real> aux;  // cached values for the backward pass
        bool grad_ready = false;
    };

    std::size_t check(NodeId id) const {
        if (!id.valid() || std::size_t(id.v) >= nodes_.size()) {
            throw ShapeError("tape: invalid node id " + std::to_string(id.v));
        }
        return std::size_t(id.v);
    }

    Node& node(NodeId id) { return nodes_[check(id)]; }

    NodeId push(OpKind kind, NodeId a, NodeId b, Tensor<Real> value) {
        Node n;
        n.kind = kind;
        n.a = a;
        n.b = b;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return NodeId{std::int32_t(nodes_.size() - 1)};
    }

    NodeId concat(std::span<const NodeId> parts, bool axis0) {
        if (parts.empty()) throw ShapeError("concat: no inputs");
        const Tensor<Real>& first = value(parts[0]);
        ops::require_rank(first, 2, "concat");
        std::size_t rows = first.extent(0), cols = first.extent(1);
        for (std::size_t k = 1; k < parts.size(); ++k) {
            const Tensor<Real>& t = value(parts[k]);
            ops::require_rank(t, 2, "concat");
            if (axis0) {
                if (t.extent(1) != cols) {
                    throw ShapeError("concat_rows: column mismatch " + shape_str(t.shape()));
                }
                rows += t.extent(0);
            } else {
                if (t.extent(0) != rows) {
                    throw ShapeError("concat_cols: row mismatch " + shape_str(t.shape()));
                }
                cols += t.extent(1);
            }
        }
        Tensor<Real> out({rows, cols});
        if (axis0) {
            std::size_t r = 0;
            for (NodeId pid : parts) {
                const Tensor<Real>& t = value(pid);
                std::copy(t.data(), t.data() + t.size(), out.data() + r * cols);
                r += t.extent(0);
            }
        } else {
            std::size_t c = 0;
            for (NodeId pid : parts) {
                const Tensor<Real>& t = value(pid);
                const std::size_t w = t.extent(1);
                for (std::size_t i = 0; i < rows; ++i) {
                    std::copy(t.data() + i * w, t.data() + (i + 1) * w,
                              out.data() + i * cols + c);
                }
                c += w;
            }
        }
        NodeId id = push(axis0 ? OpKind::ConcatRows : OpKind::ConcatCols, {}, {},
                         std::move(out));
        node(id).parts.assign(parts.begin(), parts.end());
        return id;
    }

    Tensor<Real>& gref(NodeId id) { return nodes_[std::size_t(id.v)].grad; }
    const Tensor<Real>& vref(NodeId id) const { return nodes_[std::size_t(id.v)].value; }

    void propagate(Node& n) {
        const Tensor<Real>& g = n.grad;
        switch (n.kind) {
            case OpKind::Leaf:
                break;
            case OpKind::MatMul: {
                detail::acc_matmul_nt(gref(n.a), g, vref(n.b));
                detail::acc_matmul_tn(gref(n.b), vref(n.a), g);
                break;
            }
            case OpKind::MatMulNT: {
                // y = a b^T: da += g b; db += g^T a
                detail::acc_matmul_nn(gref(n.a), g, vref(n.b));
                detail::acc_matmul_tn(gref(n.b), g, vref(n.a));
                break;
            }
            case OpKind::Add: {
                Tensor<Real>& ga = gref(n.a);
                Tensor<Real>& gb = gref(n.b);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case OpKind::Sub: {
                Tensor<Real>& ga = gref(n.a);
                Tensor<Real>& gb = gref(n.b);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            }
            case OpKind::Mul: {
                Tensor<Real>& ga = gref(n.a);
                Tensor<Real>& gb = gref(n.b);
                const Tensor<Real>& av = vref(n.a);
                const Tensor<Real>& bv = vref(n.b);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * bv[i];
                    gb[i] += g[i] * av[i];
                }
                break;
            }
            case OpKind::Scale: {
                Tensor<Real>& ga = gref(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.c * g[i];
                break;
            }
            case OpKind::Sigmoid: {
                Tensor<Real>& ga = gref(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * n.value[i] * (Real(1) - n.value[i]);
                }
                break;
            }
            case OpKind::Exp: {
                Tensor<Real>& ga = gref(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i];
                break;
            }
            case OpKind::Log: {
                Tensor<Real>& ga = gref(n.a);
                const Tensor<Real>& av = vref(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
                break;
            }
            case OpKind::AddRow: {
                Tensor<Real>& gm = gref(n.a);
                Tensor<Real>& gv = gref(n.b);
                const std::size_t rows = n.value.extent(0), cols = n.value.extent(1);
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) {
                        gm[i * cols + j] += g[i * cols + j];
                        gv[j] += g[i * cols + j];
                    }
                }
                break;
            }
            case OpKind::SliceCols: {
                Tensor<Real>& ga = gref(n.a);
                const std::size_t rows = n.value.extent(0), w = n.value.extent(1);
                const std::size_t in_cols = ga.extent(1);
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < w; ++j) {
                        ga[i * in_cols + n.i0 + j] += g[i * w + j];
                    }
                }
                break;
            }
            case OpKind::SliceRows: {
                Tensor<Real>& ga = gref(n.a);
                const std::size_t row_sz = ga.size() / ga.extent(0);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[n.i0 * row_sz + i] += g[i];
                }
                break;
            }
            case OpKind::Reshape: {
                Tensor<Real>& ga = gref(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                break;
            }
            case OpKind::Cumsum: {
                Tensor<Real>& ga = gref(n.a);
                Real suffix = 0;
                for (std::size_t i = g.size(); i-- > 0;) {
                    suffix += g[i];
                    ga[i] += suffix;
                }
                break;
            }
            case OpKind::TriDecay: {
                Tensor<Real>& gs = gref(n.a);
                const std::size_t t = n.value.extent(0);
                for (std::size_t j = 0; j < t; ++j) {
                    for (std::size_t i = 0; i < j; ++i) {
                        const Real gm = g.at(j, i) * n.value.at(j, i);
                        gs[j] += gm;
                        gs[i] -= gm;
                    }
                }
                break;
            }
            case OpKind::Outer: {
                Tensor<Real>& gu = gref(n.a);
                Tensor<Real>& gv = gref(n.b);
                const Tensor<Real>& uv = vref(n.a);
                const Tensor<Real>& vv = vref(n.b);
                const std::size_t p = uv.size(), m = vv.size();
                for (std::size_t i = 0; i < p; ++i) {
                    for (std::size_t j = 0; j < m; ++j) {
                        gu[i] += g[i * m + j] * vv[j];
                        gv[j] += g[i * m + j] * uv[i];
                    }
                }
                break;
            }
            case OpKind::OuterRows: {
                Tensor<Real>& gu = gref(n.a);
                Tensor<Real>& gb = gref(n.b);
                const Tensor<Real>& uv = vref(n.a);
                const Tensor<Real>& bv = vref(n.b);
                const std::size_t t = uv.extent(0), p = n.i0, m = n.i1;
                for (std::size_t s = 0; s < t; ++s) {
                    const Real* grow = g.data() + s * p * m;
                    for (std::size_t i = 0; i < p; ++i) {
                        for (std::size_t j = 0; j < m; ++j) {
                            gu[s * p + i] += grow[i * m + j] * bv[s * m + j];
                            gb[s * m + j] += grow[i * m + j] * uv[s * p + i];
                        }
                    }
                }
                break;
            }
            case OpKind::StateReadout: {
                Tensor<Real>& gh = gref(n.a);
                Tensor<Real>& gc = gref(n.b);
                const Tensor<Real>& hv = vref(n.a);
                const Tensor<Real>& cv = vref(n.b);
                const std::size_t t = hv.extent(0), p = n.i0, m = n.i1;
                for (std::size_t s = 0; s < t; ++s) {
                    const Real* hrow = hv.data() + s * p * m;
                    const Real* crow = cv.data() + s * m;
                    const Real* grow = g.data() + s * p;
                    for (std::size_t i = 0; i < p; ++i) {
                        for (std::size_t j = 0; j < m; ++j) {
                            gh[s * p * m + i * m + j] += grow[i] * crow[j];
                            gc[s * m + j] += grow[i] * hrow[i * m + j];
                        }
                    }
                }
                break;
            }
            case OpKind::RmsNorm: {
                Tensor<Real>& gx = gref(n.a);
                Tensor<Real>& gg = gref(n.b);
                const Tensor<Real>& xv = vref(n.a);
                const Tensor<Real>& gainv = vref(n.b);
                const std::size_t rows = xv.extent(0), d = xv.extent(1);
                for (std::size_t i = 0; i < rows; ++i) {
                    const Real inv = n.aux[i];
                    const Real* xrow = xv.data() + i * d;
                    const Real* grow = g.data() + i * d;
                    Real dot = 0;
                    for (std::size_t j = 0; j < d; ++j) dot += grow[j] * gainv[j] * xrow[j];
                    const Real k = dot * inv * inv * inv / Real(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[i * d + j] += grow[j] * gainv[j] * inv - xrow[j] * k;
                        gg[j] += grow[j] * xrow[j] * inv;
                    }
                }
                break;
            }
            case OpKind::EmbedRows: {
                Tensor<Real>& gt = gref(n.a);
                const std::size_t d = n.value.extent(1);
                for (std::size_t i = 0; i < n.ids.size(); ++i) {
                    const std::size_t r = std::size_t(n.ids[i]);
                    for (std::size_t j = 0; j < d; ++j) gt[r * d + j] += g[i * d + j];
                }
                break;
            }
            case OpKind::ConcatRows: {
                std::size_t r = 0;
                const std::size_t cols = n.value.extent(1);
                for (NodeId pid : n.parts) {
                    Tensor<Real>& gp = gref(pid);
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[r * cols + i];
                    r += gp.extent(0);
                }
                break;
            }
            case OpKind::ConcatCols: {
                std::size_t c = 0;
                const std::size_t rows = n.value.extent(0), cols = n.value.extent(1);
                for (NodeId pid : n.parts) {
                    Tensor<Real>& gp = gref(pid);
                    const std::size_t w = gp.extent(1);
                    for (std::size_t i = 0; i < rows; ++i) {
                        for (std::size_t j = 0; j < w; ++j) {
                            gp[i * w + j] += g[i * cols + c + j];
                        }
                    }
                    c += w;
                }
                break;
            }
            case OpKind::Softmax: {
                Tensor<Real>& ga = gref(n.a);
                Real dot = 0;
                for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * n.value[i];
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += n.value[i] * (g[i] - dot);
                }
                break;
            }
            case OpKind::CausalSoftmax: {
                Tensor<Real>& ga = gref(n.a);
                const std::size_t t = n.value.extent(0);
                for (std::size_t i = 0; i < t; ++i) {
                    const Real* prow = n.value.data() + i * t;
                    const Real* grow = g.data() + i * t;
                    Real dot = 0;
                    for (std::size_t j = 0; j <= i; ++j) dot += grow[j] * prow[j];
                    for (std::size_t j = 0; j <= i; ++j) {
                        ga[i * t + j] += prow[j] * (grow[j] - dot);
                    }
                }
                break;
            }
            case OpKind::CrossEntropy: {
                Tensor<Real>& gl = gref(n.a);
                const std::size_t t = n.aux.extent(0), v = n.aux.extent(1);
                const Real gscale = g[0] / Real(t);
                for (std::size_t i = 0; i < t; ++i) {
                    const Real* prow = n.aux.data() + i * v;
                    for (std::size_t j = 0; j < v; ++j) {
                        gl[i * v + j] += gscale * prow[j];
                    }
                    gl[i * v + std::size_t(n.ids[i])] -= gscale;
                }
                break;
            }
            case OpKind::Sum: {
                Tensor<Real>& ga = gref(n.a);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                break;
            }
        }
    }

    std::vector<Node> nodes_;
};

}  // namespace ssdlm
