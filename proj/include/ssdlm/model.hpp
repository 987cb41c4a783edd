#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssdlm/autodiff.hpp"
#include "ssdlm/rng.hpp"
#include "ssdlm/ssd_layer.hpp"
#include "ssdlm/tensor.hpp"

// Decoder-only language model: embedding table, L pre-norm residual SSD
// blocks (each with a P->d output map), a final RMS norm and an untied
// vocabulary head.

namespace ssdlm {

struct ModelConfig {
    std::size_t vocab_size = 256;
    std::size_t embed_dim = 128;
    std::size_t state_dim = 32;
    std::size_t proj_dim = 64;
    std::size_t num_layers = 4;
    std::size_t max_seq_len = 512;
    std::uint64_t seed = 1;

    // Byte-vocab config that trains in minutes on a laptop.
    static ModelConfig desk_default() { return ModelConfig{}; }

    void validate() const {
        if (vocab_size < 2) throw DomainError("config: vocab_size must be >= 2");
        if (embed_dim < 1 || state_dim < 1 || proj_dim < 1) {
            throw DomainError("config: embed_dim/state_dim/proj_dim must be >= 1");
        }
        if (max_seq_len < 2) throw DomainError("config: max_seq_len must be >= 2");
    }
};

template <typename Real>
struct ModelLayerParams {
    SsdLayerParams<Real> ssd;
    Tensor<Real> w_out;  // P x d
    Tensor<Real> gain;   // d
};

template <typename Real>
struct ModelParams {
    ModelConfig config;
    Tensor<Real> emb;  // V x d
    std::vector<ModelLayerParams<Real>> layers;
    Tensor<Real> final_gain;  // d
    Tensor<Real> w_vocab;     // d x V

    // Fixed traversal order; checkpoints, optimizer state and gradient
    // bookkeeping all index parameters through this.
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        fn("emb", emb);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string prefix = "layer" + std::to_string(l) + ".";
            fn(prefix + "w_in", layers[l].ssd.w_in);
            fn(prefix + "bias", layers[l].ssd.bias);
            fn(prefix + "w_out", layers[l].w_out);
            fn(prefix + "gain", layers[l].gain);
        }
        fn("final_gain", final_gain);
        fn("w_vocab", w_vocab);
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) const {
        const_cast<ModelParams*>(this)->for_each_param(
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

inline std::size_t count_params(const ModelConfig& c) {
    const std::size_t width = 1 + 2 * c.state_dim + c.proj_dim;
    return c.vocab_size * c.embed_dim +
           c.num_layers *
               (c.embed_dim * width + width + c.proj_dim * c.embed_dim + c.embed_dim) +
           c.embed_dim + c.embed_dim * c.vocab_size;
}

namespace detail {

template <typename Real>
void fill_gaussian(Tensor<Real>& t, CounterRng rng, double stddev) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = Real(stddev * rng.next_gaussian());
    }
}

}  // namespace detail

/// Deterministic Gaussian(0, 1/sqrt(fan_in)) init; biases 0, gains 1. The
/// vocab head uses 0.1/sqrt(fan_in) so a fresh model predicts near-uniform
/// (initial cross-entropy ~ ln V).
template <typename Real = double>
ModelParams<Real> init_params(const ModelConfig& config) {
    config.validate();
    const CounterRng base(config.seed);
    const double d = double(config.embed_dim);
    const double p = double(config.proj_dim);

    ModelParams<Real> params;
    params.config = config;
    params.emb = Tensor<Real>({config.vocab_size, config.embed_dim});
    params.layers.resize(config.num_layers);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        auto& layer = params.layers[l];
        layer.ssd.embed_dim = config.embed_dim;
        layer.ssd.state_dim = config.state_dim;
        layer.ssd.proj_dim = config.proj_dim;
        layer.ssd.w_in = Tensor<Real>({config.embed_dim, layer.ssd.proj_width()});
        layer.ssd.bias = Tensor<Real>({layer.ssd.proj_width()});
        layer.w_out = Tensor<Real>({config.proj_dim, config.embed_dim});
        layer.gain = Tensor<Real>::full({config.embed_dim}, Real(1));
    }
    params.final_gain = Tensor<Real>::full({config.embed_dim}, Real(1));
    params.w_vocab = Tensor<Real>({config.embed_dim, config.vocab_size});

    std::uint64_t stream = 0;
    params.for_each_param([&](const std::string& name, Tensor<Real>& t) {
        const CounterRng rng = base.split(stream++);
        if (name == "emb" || name.ends_with("w_in")) {
            detail::fill_gaussian(t, rng, 1.0 / std::sqrt(d));
        } else if (name.ends_with("w_out")) {
            detail::fill_gaussian(t, rng, 1.0 / std::sqrt(p));
        } else if (name == "w_vocab") {
            detail::fill_gaussian(t, rng, 0.1 / std::sqrt(d));
        }
        // biases stay 0, gains stay 1
    });
    return params;
}

/// Tape handles for every model parameter, in for_each_param order.
template <typename Real>
struct ModelParamNodes {
    std::vector<NodeId> ordered;
    std::vector<std::string> names;

    NodeId emb() const { return ordered.front(); }
    NodeId final_gain() const { return ordered[ordered.size() - 2]; }
    NodeId w_vocab() const { return ordered.back(); }
    SsdLayerNodes ssd(std::size_t l) const {
        return SsdLayerNodes{ordered[1 + 4 * l], ordered[2 + 4 * l]};
    }
    NodeId w_out(std::size_t l) const { return ordered[3 + 4 * l]; }
    NodeId gain(std::size_t l) const { return ordered[4 + 4 * l]; }
};

template <typename Real>
ModelParamNodes<Real> lift_params(Tape<Real>& tape, const ModelParams<Real>& params) {
    ModelParamNodes<Real> nodes;
    params.for_each_param([&](const std::string& name, const Tensor<Real>& t) {
        nodes.ordered.push_back(tape.leaf(t));
        nodes.names.push_back(name);
    });
    return nodes;
}

inline void validate_tokens(const ModelConfig& config, std::span<const int> tokens,
                            const char* where) {
    if (tokens.empty()) throw DomainError(std::string(where) + ": empty token sequence");
    if (tokens.size() > config.max_seq_len) {
        throw DomainError(std::string(where) + ": sequence of length " +
                          std::to_string(tokens.size()) + " exceeds max_seq_len " +
                          std::to_string(config.max_seq_len));
    }
    for (int id : tokens) {
        if (id < 0 || std::size_t(id) >= config.vocab_size) {
            throw DomainError(std::string(where) + ": token id " + std::to_string(id) +
                              " out of range for vocab " + std::to_string(config.vocab_size));
        }
    }
}

/// Records the full teacher-forced forward pass; returns the T x V logits node.
template <typename Real>
NodeId logits_graph(Tape<Real>& tape, const ModelConfig& config,
                    const ModelParamNodes<Real>& nodes, std::span<const int> tokens,
                    std::size_t chunk = kDefaultChunk) {
    validate_tokens(config, tokens, "logits_graph");
    const std::size_t q = std::min(chunk, tokens.size());
    NodeId x = tape.embed_rows(nodes.emb(), tokens);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        NodeId normed = tape.rms_norm(x, nodes.gain(l));
        NodeId y = ssd_layer_graph(tape, nodes.ssd(l), normed, config.state_dim,
                                   config.proj_dim, q);
        x = tape.add(x, tape.matmul(y, nodes.w_out(l)));
    }
    return tape.matmul(tape.rms_norm(x, nodes.final_gain()), nodes.w_vocab());
}

/// Teacher-forced logits for a token sequence (parallel training form).
template <typename Real>
Tensor<Real> forward_train(const ModelParams<Real>& params, std::span<const int> tokens,
                           std::size_t chunk = kDefaultChunk) {
    Tape<Real> tape;
    const ModelParamNodes<Real> nodes = lift_params(tape, params);
    return tape.value(logits_graph(tape, params.config, nodes, tokens, chunk));
}

}  // namespace ssdlm
