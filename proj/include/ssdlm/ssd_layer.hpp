#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ssdlm/autodiff.hpp"
#include "ssdlm/ops.hpp"
#include "ssdlm/tensor.hpp"

// The state space dual layer. One shared projection turns each embedding
// into (decay a_t, input kernel b_t, output kernel c_t, features u_t); the
// same sequence map is then evaluated four ways, all algebraically equal
// from a zero initial state:
//
//   step()           per-token recurrence  H_t = a_t H_{t-1} + u_t (x) b_t
//   forward_naive()  full TxT transition matrix, three contractions
//   forward_chunked  block-local transition matrices plus a carried state
//   ssd_layer_graph  tape-recorded chunked form used for training
//
// The cross-agreement of these routes is the artifact's central property.

namespace ssdlm {

inline constexpr std::size_t kDefaultChunk = 16;

template <typename Real>
struct SsdLayerParams {
    std::size_t embed_dim = 0;  // d
    std::size_t state_dim = 0;  // N
    std::size_t proj_dim = 0;   // P
    Tensor<Real> w_in;          // d x (1 + 2N + P)
    Tensor<Real> bias;          // 1 + 2N + P

    // Fixed column partition of the projection output: [a-logit | b | c | u].
    std::size_t proj_width() const { return 1 + 2 * state_dim + proj_dim; }
    std::size_t b_off() const { return 1; }
    std::size_t c_off() const { return 1 + state_dim; }
    std::size_t u_off() const { return 1 + 2 * state_dim; }
};

/// Per-timestep SSD parameters for a whole sequence.
template <typename Real>
struct ProjectedSequence {
    Tensor<Real> a;  // T, entries in (0,1)
    Tensor<Real> b;  // T x N
    Tensor<Real> c;  // T x N
    Tensor<Real> u;  // T x P

    std::size_t length() const { return a.size(); }
};

/// The P x N hidden matrix carried across decode steps. Its byte size never
/// changes; this is the entire per-layer inference memory.
template <typename Real>
struct RecurrentState {
    Tensor<Real> h;  // P x N
    std::size_t position = 0;

    static RecurrentState fresh(std::size_t proj_dim, std::size_t state_dim) {
        return RecurrentState{Tensor<Real>::zeros({proj_dim, state_dim}), 0};
    }

    std::size_t byte_size() const { return h.byte_size() + sizeof(position); }
};

/// T x T lower-triangular cumulative-decay matrix with unit diagonal.
template <typename Real>
struct TransitionMatrix {
    Tensor<Real> m;

    std::size_t length() const { return m.extent(0); }
};

namespace detail {

template <typename Real>
void require_embedding(const SsdLayerParams<Real>& params, std::size_t width,
                       const char* where) {
    if (width != params.embed_dim) {
        throw ShapeError(std::string(where) + ": embedding width " + std::to_string(width) +
                         " vs layer embed_dim " + std::to_string(params.embed_dim));
    }
}

}  // namespace detail

template <typename Real>
ProjectedSequence<Real> project_inputs(const SsdLayerParams<Real>& params,
                                       const Tensor<Real>& e) {
    ops::require_rank(e, 2, "project_inputs");
    detail::require_embedding(params, e.extent(1), "project_inputs");
    const Tensor<Real> raw = ops::add_row(ops::matmul(e, params.w_in), params.bias);
    const std::size_t t = e.extent(0);
    const std::size_t n = params.state_dim, p = params.proj_dim;
    ProjectedSequence<Real> out;
    out.a = Tensor<Real>({t});
    for (std::size_t i = 0; i < t; ++i) out.a[i] = ops::sigmoid_scalar(raw.at(i, 0));
    out.b = ops::slice_cols(raw, params.b_off(), params.b_off() + n);
    out.c = ops::slice_cols(raw, params.c_off(), params.c_off() + n);
    out.u = ops::slice_cols(raw, params.u_off(), params.u_off() + p);
    return out;
}

/// Projection of a single embedding vector; writes into a caller scratch row.
template <typename Real>
struct ProjectedToken {
    Real a = 0;
    Tensor<Real> b, c, u;
};

template <typename Real>
ProjectedToken<Real> project_token(const SsdLayerParams<Real>& params,
                                   const Tensor<Real>& e_t) {
    ops::require_rank(e_t, 1, "project_token");
    detail::require_embedding(params, e_t.extent(0), "project_token");
    Tensor<Real> raw = ops::vecmat(e_t, params.w_in);
    for (std::size_t j = 0; j < raw.size(); ++j) raw[j] += params.bias[j];
    const std::size_t n = params.state_dim, p = params.proj_dim;
    ProjectedToken<Real> out;
    out.a = ops::sigmoid_scalar(raw[0]);
    out.b = Tensor<Real>({n});
    out.c = Tensor<Real>({n});
    out.u = Tensor<Real>({p});
    std::copy(raw.data() + params.b_off(), raw.data() + params.b_off() + n, out.b.data());
    std::copy(raw.data() + params.c_off(), raw.data() + params.c_off() + n, out.c.data());
    std::copy(raw.data() + params.u_off(), raw.data() + params.u_off() + p, out.u.data());
    return out;
}

/// One recurrence update from already-projected values:
/// H <- a * H + u (x) b, then y = H c. O(N*P), position-independent.
template <typename Real>
Tensor<Real> step_core(RecurrentState<Real>& state, Real a, const Tensor<Real>& b,
                       const Tensor<Real>& c, const Tensor<Real>& u) {
    const std::size_t p = state.h.extent(0), n = state.h.extent(1);
    if (b.size() != n || c.size() != n || u.size() != p) {
        throw ShapeError("step_core: kernels " + shape_str(b.shape()) + "/" +
                         shape_str(c.shape()) + "/" + shape_str(u.shape()) +
                         " do not fit state " + shape_str(state.h.shape()));
    }
    Tensor<Real> y({p});
    Real* h = state.h.data();
    for (std::size_t i = 0; i < p; ++i) {
        const Real ui = u[i];
        Real* hrow = h + i * n;
        Real acc = 0;
        for (std::size_t j = 0; j < n; ++j) {
            hrow[j] = a * hrow[j] + ui * b[j];
            acc += hrow[j] * c[j];
        }
        y[i] = acc;
    }
#ifdef SSDLM_FAULT_INJECT_STEP
    // Test fixture: corrupt the recurrence so verification suites must fail.
    if (p > 0) y[0] += Real(1e-3);
#endif
    state.position += 1;
    return y;
}

template <typename Real>
Tensor<Real> step(const SsdLayerParams<Real>& params, RecurrentState<Real>& state,
                  const Tensor<Real>& e_t) {
    ProjectedToken<Real> pt = project_token(params, e_t);
    return step_core(state, pt.a, pt.b, pt.c, pt.u);
}

/// Cumulative-decay matrix m[j][i] = prod_{k=i+1..j} a[k] for i <= j, built
/// in log space (exp of prefix-sum differences) so long runs of sub-unit
/// decays underflow to exact zeros instead of cascading.
template <typename Real>
TransitionMatrix<Real> build_transition_matrix(const Tensor<Real>& a) {
    if (a.rank() != 1) {
        throw ShapeError("build_transition_matrix: expected vector, got " +
                         shape_str(a.shape()));
    }
    const std::size_t t = a.size();
    for (std::size_t i = 0; i < t; ++i) {
        if (!(a[i] > Real(0)) || a[i] > Real(1)) {
            throw DomainError("build_transition_matrix: decay " +
                              std::to_string(double(a[i])) + " at position " +
                              std::to_string(i) + " outside (0, 1]");
        }
    }
    // s[i] = sum_{k=1..i} log a[k]; a[0] is outside every product and must
    // not perturb the exponent differences even at the ulp level.
    Tensor<Real> s({t});
    Real acc = 0;
    s[0] = 0;
    for (std::size_t i = 1; i < t; ++i) {
        acc += std::log(a[i]);
        s[i] = acc;
    }
    Tensor<Real> m({t, t});
    for (std::size_t j = 0; j < t; ++j) {
        for (std::size_t i = 0; i < j; ++i) m.at(j, i) = std::exp(s[j] - s[i]);
        m.at(j, j) = Real(1);
    }
    return TransitionMatrix<Real>{std::move(m)};
}

/// Parallel form with the transition matrix fully materialized:
/// Z[s] = u_s (x) b_s; H[t] = sum_s M[t][s] Z[s]; Y[t] = H[t] c_t.
/// Implies a zero initial state (M has no column for one).
template <typename Real>
Tensor<Real> forward_naive(const SsdLayerParams<Real>& params, const Tensor<Real>& e) {
    const ProjectedSequence<Real> seq = project_inputs(params, e);
    const std::size_t t = seq.length();
    const std::size_t n = params.state_dim, p = params.proj_dim;
    const TransitionMatrix<Real> tm = build_transition_matrix(seq.a);
    Tensor<Real> z({t, p * n});
    for (std::size_t s = 0; s < t; ++s) {
        for (std::size_t i = 0; i < p; ++i) {
            const Real ui = seq.u.at(s, i);
            for (std::size_t j = 0; j < n; ++j) z[s * p * n + i * n + j] = ui * seq.b.at(s, j);
        }
    }
    const Tensor<Real> h = ops::matmul(tm.m, z);
    Tensor<Real> y({t, p});
    for (std::size_t s = 0; s < t; ++s) {
        const Real* hrow = h.data() + s * p * n;
        for (std::size_t i = 0; i < p; ++i) {
            Real acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += hrow[i * n + j] * seq.c.at(s, j);
            y.at(s, i) = acc;
        }
    }
    ensure_finite(y, "forward_naive");
    return y;
}

/// Block-wise parallel form: within each block of Q positions the local
/// transition matrix applies; an inter-block state carries history, decayed
/// into each output by the in-block cumulative decay. Output matches
/// forward_naive for every Q.
template <typename Real>
Tensor<Real> forward_chunked(const SsdLayerParams<Real>& params, const Tensor<Real>& e,
                             std::size_t chunk) {
    ops::require_rank(e, 2, "forward_chunked");
    const std::size_t t = e.extent(0);
    if (chunk < 1 || chunk > t) {
        throw DomainError("forward_chunked: chunk " + std::to_string(chunk) +
                          " outside [1, " + std::to_string(t) + "]");
    }
    const ProjectedSequence<Real> seq = project_inputs(params, e);
    const std::size_t n = params.state_dim, p = params.proj_dim;
    Tensor<Real> y({t, p});
    Tensor<Real> carry({p * n});  // H at the end of the previous block, flat
    bool carry_live = false;
    for (std::size_t s0 = 0; s0 < t; s0 += chunk) {
        const std::size_t q = std::min(chunk, t - s0);
        // Inclusive prefix sums of log a over the block.
        Tensor<Real> s({q});
        Real acc = 0;
        for (std::size_t i = 0; i < q; ++i) {
            acc += std::log(seq.a[s0 + i]);
            s[i] = acc;
        }
        // H_local[t'] = sum_{s'<=t'} exp(s_t' - s_s') Z[s0+s'], accumulated
        // row by row via the recurrence-free local contraction.
        Tensor<Real> hblk({q, p * n});
        for (std::size_t tt = 0; tt < q; ++tt) {
            Real* hrow = hblk.data() + tt * p * n;
            for (std::size_t ss = 0; ss <= tt; ++ss) {
                const Real w = (ss == tt) ? Real(1) : std::exp(s[tt] - s[ss]);
                const Real* urow = seq.u.data() + (s0 + ss) * p;
                const Real* brow = seq.b.data() + (s0 + ss) * n;
                for (std::size_t i = 0; i < p; ++i) {
                    const Real wu = w * urow[i];
                    for (std::size_t j = 0; j < n; ++j) hrow[i * n + j] += wu * brow[j];
                }
            }
            if (carry_live) {
                const Real din = std::exp(s[tt]);  // decay from carry position to t'
                for (std::size_t i = 0; i < p * n; ++i) hrow[i] += din * carry[i];
            }
            const Real* crow = seq.c.data() + (s0 + tt) * n;
            for (std::size_t i = 0; i < p; ++i) {
                Real out = 0;
                for (std::size_t j = 0; j < n; ++j) out += hrow[i * n + j] * crow[j];
                y.at(s0 + tt, i) = out;
            }
        }
        std::copy(hblk.data() + (q - 1) * p * n, hblk.data() + q * p * n, carry.data());
        carry_live = true;
    }
    ensure_finite(y, "forward_chunked");
    return y;
}

/// Tape node handles for one layer's parameters.
struct SsdLayerNodes {
    NodeId w_in;
    NodeId bias;
};

/// Records the chunked parallel form onto a tape: projection, block-local
/// tri_decay matrices, low-rank updates, carried state, readout. Returns the
/// T x P output node. This is the training-time form of the layer.
template <typename Real>
NodeId ssd_layer_graph(Tape<Real>& tape, const SsdLayerNodes& layer, NodeId x,
                       std::size_t state_dim, std::size_t proj_dim, std::size_t chunk) {
    const std::size_t t = tape.value(x).extent(0);
    const std::size_t n = state_dim, p = proj_dim;
    const std::size_t q_max = std::min(chunk, t);
    if (q_max < 1) throw DomainError("ssd_layer_graph: empty sequence");

    const NodeId raw = tape.add_row(tape.matmul(x, layer.w_in), layer.bias);
    const NodeId a = tape.sigmoid(tape.slice_cols(raw, 0, 1));          // T x 1
    const NodeId b = tape.slice_cols(raw, 1, 1 + n);                    // T x N
    const NodeId c = tape.slice_cols(raw, 1 + n, 1 + 2 * n);            // T x N
    const NodeId u = tape.slice_cols(raw, 1 + 2 * n, 1 + 2 * n + p);    // T x P
    const NodeId log_a = tape.log(a);

    std::vector<NodeId> outputs;
    NodeId carry{};  // flat P*N vector once live
    for (std::size_t s0 = 0; s0 < t; s0 += q_max) {
        const std::size_t q = std::min(q_max, t - s0);
        const NodeId s = tape.cumsum(tape.slice_rows(log_a, s0, s0 + q));  // q x 1
        const NodeId m_loc = tape.tri_decay(s);                            // q x q
        const NodeId z = tape.outer_rows(tape.slice_rows(u, s0, s0 + q),
                                         tape.slice_rows(b, s0, s0 + q));  // q x P*N
        NodeId h = tape.matmul(m_loc, z);
        if (carry.valid()) {
            const NodeId din = tape.reshape(tape.exp(s), {q});
            h = tape.add(h, tape.outer(din, carry));
        }
        outputs.push_back(tape.state_readout(h, tape.slice_rows(c, s0, s0 + q), p, n));
        carry = tape.reshape(tape.slice_rows(h, q - 1, q), {p * n});
    }
    if (outputs.size() == 1) return outputs[0];
    return tape.concat_rows(outputs);
}

}  // namespace ssdlm
