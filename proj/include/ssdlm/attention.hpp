#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssdlm/autodiff.hpp"
#include "ssdlm/model.hpp"
#include "ssdlm/ops.hpp"
#include "ssdlm/rng.hpp"
#include "ssdlm/training.hpp"

// Minimal causal-attention decoder used as the measurement baseline: pre-norm
// residual blocks of multi-head scaled-dot-product attention plus a SiLU
// feedforward, with an explicit per-layer key/value cache during decoding.
// Layer count and feedforward width are chosen to match the SSD model's
// parameter count; the attention path is deliberately unoptimized so its
// per-token cost honestly grows with position.

namespace ssdlm {

struct AttnConfig {
    std::size_t vocab_size = 256;
    std::size_t embed_dim = 128;
    std::size_t num_heads = 4;
    std::size_t head_dim = 32;
    std::size_t ffn_dim = 133;
    std::size_t num_layers = 1;
    std::size_t max_seq_len = 512;
    std::uint64_t seed = 1;

    std::size_t inner_width() const { return num_heads * head_dim; }

    void validate() const {
        if (vocab_size < 2) throw DomainError("attn config: vocab_size must be >= 2");
        if (embed_dim < 1 || num_heads < 1 || head_dim < 1 || ffn_dim < 1 ||
            num_layers < 1) {
            throw DomainError("attn config: dims must be >= 1");
        }
        if (max_seq_len < 2) throw DomainError("attn config: max_seq_len must be >= 2");
    }

    /// Capacity-matched baseline for an SSD model config: 4 heads of width
    /// d/4 (full-width attention), layer count picked so the attention mass
    /// fits inside the SSD parameter budget, feedforward width closing the
    /// remaining gap.
    static AttnConfig matched_to(const ModelConfig& model) {
        AttnConfig c;
        c.vocab_size = model.vocab_size;
        c.embed_dim = model.embed_dim;
        c.max_seq_len = model.max_seq_len;
        c.seed = model.seed;
        c.num_heads = 4;
        c.head_dim = std::max<std::size_t>(1, model.embed_dim / 4);
        const std::size_t d = c.embed_dim;
        const std::size_t m = c.inner_width();
        const std::size_t target = count_params(model);
        const std::size_t fixed = c.vocab_size * d + d * c.vocab_size + d;
        const std::size_t per_layer_base = 4 * d * m + 2 * d;
        const std::size_t gap = target > fixed ? target - fixed : 0;
        c.num_layers = std::max<std::size_t>(1, gap / per_layer_base);
        const long long leftover =
            (long long)(gap) - (long long)(c.num_layers * per_layer_base);
        const long long f =
            std::llround(double(leftover) / (2.0 * double(d) * double(c.num_layers)));
        c.ffn_dim = std::size_t(std::max(1LL, f));
        return c;
    }
};

template <typename Real>
struct AttnLayerParams {
    Tensor<Real> wq, wk, wv;  // d x m
    Tensor<Real> wo;          // m x d
    Tensor<Real> attn_gain;   // d
    Tensor<Real> w1;          // d x F
    Tensor<Real> w2;          // F x d
    Tensor<Real> ffn_gain;    // d
};

template <typename Real>
struct AttnParams {
    AttnConfig config;
    Tensor<Real> emb;  // V x d
    std::vector<AttnLayerParams<Real>> layers;
    Tensor<Real> final_gain;  // d
    Tensor<Real> w_vocab;     // d x V

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        fn("emb", emb);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string prefix = "layer" + std::to_string(l) + ".";
            fn(prefix + "wq", layers[l].wq);
            fn(prefix + "wk", layers[l].wk);
            fn(prefix + "wv", layers[l].wv);
            fn(prefix + "wo", layers[l].wo);
            fn(prefix + "attn_gain", layers[l].attn_gain);
            fn(prefix + "w1", layers[l].w1);
            fn(prefix + "w2", layers[l].w2);
            fn(prefix + "ffn_gain", layers[l].ffn_gain);
        }
        fn("final_gain", final_gain);
        fn("w_vocab", w_vocab);
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) const {
        const_cast<AttnParams*>(this)->for_each_param(
            [&](const std::string& name, Tensor<Real>& t) {
                fn(name, static_cast<const Tensor<Real>&>(t));
            });
    }

    std::size_t param_count() const {
        std::size_t total = 0;
        for_each_param([&](const std::string&, const Tensor<Real>& t) { total += t.size(); });
        return total;
    }
};

inline std::size_t attn_count_params(const AttnConfig& c) {
    const std::size_t d = c.embed_dim, m = c.inner_width(), f = c.ffn_dim;
    return c.vocab_size * d + c.num_layers * (4 * d * m + 2 * d * f + 2 * d) + d +
           d * c.vocab_size;
}

template <typename Real = double>
AttnParams<Real> attn_init_params(const AttnConfig& config) {
    config.validate();
    const CounterRng base(config.seed ^ 0xA77E);
    const std::size_t d = config.embed_dim, m = config.inner_width(), f = config.ffn_dim;

    AttnParams<Real> params;
    params.config = config;
    params.emb = Tensor<Real>({config.vocab_size, d});
    params.layers.resize(config.num_layers);
    for (auto& layer : params.layers) {
        layer.wq = Tensor<Real>({d, m});
        layer.wk = Tensor<Real>({d, m});
        layer.wv = Tensor<Real>({d, m});
        layer.wo = Tensor<Real>({m, d});
        layer.attn_gain = Tensor<Real>::full({d}, Real(1));
        layer.w1 = Tensor<Real>({d, f});
        layer.w2 = Tensor<Real>({f, d});
        layer.ffn_gain = Tensor<Real>::full({d}, Real(1));
    }
    params.final_gain = Tensor<Real>::full({d}, Real(1));
    params.w_vocab = Tensor<Real>({d, config.vocab_size});

    std::uint64_t stream = 0;
    params.for_each_param([&](const std::string& name, Tensor<Real>& t) {
        const CounterRng rng = base.split(stream++);
        if (name == "emb" || name.ends_with("wq") || name.ends_with("wk") ||
            name.ends_with("wv") || name.ends_with("w1")) {
            detail::fill_gaussian(t, rng, 1.0 / std::sqrt(double(d)));
        } else if (name.ends_with("wo")) {
            detail::fill_gaussian(t, rng, 1.0 / std::sqrt(double(m)));
        } else if (name.ends_with("w2")) {
            detail::fill_gaussian(t, rng, 1.0 / std::sqrt(double(f)));
        } else if (name == "w_vocab") {
            detail::fill_gaussian(t, rng, 0.1 / std::sqrt(double(d)));
        }
    });
    return params;
}

template <typename Real>
struct AttnParamNodes {
    std::vector<NodeId> ordered;
    std::vector<std::string> names;

    NodeId emb() const { return ordered.front(); }
    NodeId final_gain() const { return ordered[ordered.size() - 2]; }
    NodeId w_vocab() const { return ordered.back(); }
    NodeId layer(std::size_t l, std::size_t field) const {
        return ordered[1 + 8 * l + field];  // wq,wk,wv,wo,attn_gain,w1,w2,ffn_gain
    }
};

template <typename Real>
AttnParamNodes<Real> lift_attn_params(Tape<Real>& tape, const AttnParams<Real>& params) {
    AttnParamNodes<Real> nodes;
    params.for_each_param([&](const std::string& name, const Tensor<Real>& t) {
        nodes.ordered.push_back(tape.leaf(t));
        nodes.names.push_back(name);
    });
    return nodes;
}

/// Teacher-forced attention forward as a tape graph (T x V logits node).
template <typename Real>
NodeId attn_logits_graph(Tape<Real>& tape, const AttnConfig& config,
                         const AttnParamNodes<Real>& nodes, std::span<const int> tokens) {
    if (tokens.empty()) throw DomainError("attn_logits_graph: empty token sequence");
    if (tokens.size() > config.max_seq_len) {
        throw DomainError("attn_logits_graph: sequence of length " +
                          std::to_string(tokens.size()) + " exceeds max_seq_len " +
                          std::to_string(config.max_seq_len));
    }
    const std::size_t hd = config.head_dim;
    const Real inv_sqrt = Real(1) / Real(std::sqrt(double(hd)));
    NodeId x = tape.embed_rows(nodes.emb(), tokens);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        NodeId xn = tape.rms_norm(x, nodes.layer(l, 4));
        NodeId q = tape.matmul(xn, nodes.layer(l, 0));
        NodeId k = tape.matmul(xn, nodes.layer(l, 1));
        NodeId v = tape.matmul(xn, nodes.layer(l, 2));
        std::vector<NodeId> heads;
        for (std::size_t h = 0; h < config.num_heads; ++h) {
            NodeId qh = tape.slice_cols(q, h * hd, (h + 1) * hd);
            NodeId kh = tape.slice_cols(k, h * hd, (h + 1) * hd);
            NodeId vh = tape.slice_cols(v, h * hd, (h + 1) * hd);
            NodeId probs = tape.causal_softmax(tape.scale(tape.matmul_nt(qh, kh), inv_sqrt));
            heads.push_back(tape.matmul(probs, vh));
        }
        NodeId mixed = heads.size() == 1 ? heads[0] : tape.concat_cols(heads);
        x = tape.add(x, tape.matmul(mixed, nodes.layer(l, 3)));
        NodeId xf = tape.rms_norm(x, nodes.layer(l, 7));
        NodeId h1 = tape.matmul(xf, nodes.layer(l, 5));
        NodeId act = tape.mul(h1, tape.sigmoid(h1));  // SiLU
        x = tape.add(x, tape.matmul(act, nodes.layer(l, 6)));
    }
    return tape.matmul(tape.rms_norm(x, nodes.final_gain()), nodes.w_vocab());
}

template <typename Real>
Tensor<Real> attn_forward_train(const AttnParams<Real>& params, std::span<const int> tokens) {
    Tape<Real> tape;
    const AttnParamNodes<Real> nodes = lift_attn_params(tape, params);
    return tape.value(attn_logits_graph(tape, params.config, nodes, tokens));
}

/// Mean next-token cross-entropy and gradients for the baseline (it trains
/// through the same tape machinery as the SSD model).
template <typename Real>
LossAndGrads<Real> attn_loss_and_grads(const AttnParams<Real>& params,
                                       std::span<const std::vector<int>> batch) {
    if (batch.empty()) throw DomainError("attn_loss_and_grads: empty batch");
    Tape<Real> tape;
    const AttnParamNodes<Real> nodes = lift_attn_params(tape, params);
    NodeId total{};
    for (const std::vector<int>& seq : batch) {
        if (seq.size() < 2) {
            throw DomainError("attn_loss_and_grads: sequence needs >= 2 tokens");
        }
        const std::span<const int> inputs(seq.data(), seq.size() - 1);
        const std::span<const int> targets(seq.data() + 1, seq.size() - 1);
        NodeId loss = tape.cross_entropy(attn_logits_graph(tape, params.config, nodes, inputs),
                                         targets);
        total = total.valid() ? tape.add(total, loss) : loss;
    }
    if (batch.size() > 1) total = tape.scale(total, Real(1.0 / double(batch.size())));
    tape.backward(total);

    LossAndGrads<Real> out;
    out.loss = double(tape.value(total).item());
    out.names = nodes.names;
    for (NodeId id : nodes.ordered) out.grads.push_back(tape.grad(id));
    return out;
}

/// Per-layer key/value rows appended every decode step: the linearly growing
/// memory the SSD model exists to avoid.
template <typename Real>
struct KvCache {
    struct Layer {
        std::vector<Real> keys;    // positions x m, row-major
        std::vector<Real> values;  // positions x m
    };
    std::vector<Layer> layers;
    std::size_t width = 0;      // m
    std::size_t positions = 0;  // tokens processed

    static KvCache fresh(const AttnConfig& config) {
        KvCache c;
        c.layers.resize(config.num_layers);
        c.width = config.inner_width();
        return c;
    }

    /// Bytes actually stored for keys and values.
    std::size_t byte_size() const {
        std::size_t total = 0;
        for (const Layer& l : layers) {
            total += (l.keys.size() + l.values.size()) * sizeof(Real);
        }
        return total;
    }
};

/// One decode step: project q/k/v, append k/v to the cache, attend over all
/// cached positions. Per-step cost grows linearly with position by design.
template <typename Real>
Tensor<Real> attn_decode_step(const AttnParams<Real>& params, KvCache<Real>& cache,
                              int token) {
    const AttnConfig& c = params.config;
    if (token < 0 || std::size_t(token) >= c.vocab_size) {
        throw DomainError("attn_decode_step: token id " + std::to_string(token) +
                          " out of range for vocab " + std::to_string(c.vocab_size));
    }
    const std::size_t d = c.embed_dim, m = c.inner_width(), hd = c.head_dim;
    const Real inv_sqrt = Real(1) / Real(std::sqrt(double(hd)));

    Tensor<Real> x({d});
    for (std::size_t j = 0; j < d; ++j) x[j] = params.emb.at(std::size_t(token), j);
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const AttnLayerParams<Real>& lp = params.layers[l];
        const Tensor<Real> xn = ops::rms_norm_vec(x, lp.attn_gain);
        const Tensor<Real> q = ops::vecmat(xn, lp.wq);
        const Tensor<Real> k = ops::vecmat(xn, lp.wk);
        const Tensor<Real> v = ops::vecmat(xn, lp.wv);
        auto& layer_cache = cache.layers[l];
        layer_cache.keys.insert(layer_cache.keys.end(), k.data(), k.data() + m);
        layer_cache.values.insert(layer_cache.values.end(), v.data(), v.data() + m);
        const std::size_t t = layer_cache.keys.size() / m;

        Tensor<Real> mixed({m});
        std::vector<Real> scores(t);
        for (std::size_t h = 0; h < c.num_heads; ++h) {
            const std::size_t off = h * hd;
            Real mx = -std::numeric_limits<Real>::infinity();
            for (std::size_t s = 0; s < t; ++s) {
                const Real* krow = layer_cache.keys.data() + s * m + off;
                Real acc = 0;
                for (std::size_t j = 0; j < hd; ++j) acc += q[off + j] * krow[j];
                scores[s] = acc * inv_sqrt;
                mx = std::max(mx, scores[s]);
            }
            Real denom = 0;
            for (std::size_t s = 0; s < t; ++s) {
                scores[s] = std::exp(scores[s] - mx);
                denom += scores[s];
            }
            for (std::size_t s = 0; s < t; ++s) {
                const Real w = scores[s] / denom;
                const Real* vrow = layer_cache.values.data() + s * m + off;
                for (std::size_t j = 0; j < hd; ++j) mixed[off + j] += w * vrow[j];
            }
        }
        const Tensor<Real> attn_out = ops::vecmat(mixed, lp.wo);
        for (std::size_t j = 0; j < d; ++j) x[j] += attn_out[j];

        const Tensor<Real> xf = ops::rms_norm_vec(x, lp.ffn_gain);
        Tensor<Real> h1 = ops::vecmat(xf, lp.w1);
        for (std::size_t j = 0; j < h1.size(); ++j) h1[j] *= ops::sigmoid_scalar(h1[j]);
        const Tensor<Real> ffn_out = ops::vecmat(h1, lp.w2);
        for (std::size_t j = 0; j < d; ++j) x[j] += ffn_out[j];
    }
    cache.positions += 1;
    return ops::vecmat(ops::rms_norm_vec(x, params.final_gain), params.w_vocab);
}

}  // namespace ssdlm
