#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssdlm/model.hpp"
#include "ssdlm/ops.hpp"
#include "ssdlm/rng.hpp"
#include "ssdlm/ssd_layer.hpp"

// Autoregressive decoding on the recurrent form: per-layer P x N states, a
// d-wide residual scratch, and a sampler stream. Total session memory is
// fixed for its whole lifetime regardless of how many tokens it has seen.

namespace ssdlm {

template <typename Real>
struct DecodeSession {
    std::vector<RecurrentState<Real>> states;  // one per layer, lockstep
    Tensor<Real> x;                            // residual-stream scratch (d)
    CounterRng rng;
    std::uint64_t tokens_emitted = 0;
    Real temperature = Real(1);

    static DecodeSession start(const ModelParams<Real>& params, Real temperature,
                               std::uint64_t seed) {
        if (temperature < Real(0)) {
            throw DomainError("decode: temperature must be >= 0");
        }
        DecodeSession s{{}, Tensor<Real>({params.config.embed_dim}), CounterRng(seed), 0,
                        temperature};
        s.states.reserve(params.config.num_layers);
        for (std::size_t l = 0; l < params.config.num_layers; ++l) {
            s.states.push_back(RecurrentState<Real>::fresh(params.config.proj_dim,
                                                           params.config.state_dim));
        }
        return s;
    }

    std::size_t position() const { return states.empty() ? 0 : states.front().position; }

    /// Owned bytes: layer states + scratch + sampler/counter fields.
    std::size_t byte_size() const {
        std::size_t total = x.byte_size() + sizeof(rng) + sizeof(tokens_emitted) +
                            sizeof(temperature);
        for (const auto& st : states) total += st.byte_size();
        return total;
    }
};

/// Advance every layer state by one token; returns the vocab logits. Same
/// residual/norm wiring as the teacher-forced forward pass, so per-position
/// logits agree between the two paths. Cost per call is independent of how
/// many tokens the session has consumed.
template <typename Real>
Tensor<Real> decode_step(const ModelParams<Real>& params, DecodeSession<Real>& session,
                         int token) {
    const ModelConfig& c = params.config;
    if (token < 0 || std::size_t(token) >= c.vocab_size) {
        throw DomainError("decode_step: token id " + std::to_string(token) +
                          " out of range for vocab " + std::to_string(c.vocab_size));
    }
    const std::size_t d = c.embed_dim;
    for (std::size_t j = 0; j < d; ++j) session.x[j] = params.emb.at(std::size_t(token), j);
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const Tensor<Real> normed = ops::rms_norm_vec(session.x, params.layers[l].gain);
        const Tensor<Real> y = step(params.layers[l].ssd, session.states[l], normed);
        const Tensor<Real> delta = ops::vecmat(y, params.layers[l].w_out);
        for (std::size_t j = 0; j < d; ++j) session.x[j] += delta[j];
    }
    return ops::vecmat(ops::rms_norm_vec(session.x, params.final_gain), params.w_vocab);
}

/// Temperature 0 is greedy argmax with lowest-index tie break; otherwise an
/// inverse-CDF draw from softmax(logits / temperature) on the caller's stream.
template <typename Real>
int sample_categorical(const Tensor<Real>& logits, Real temperature, CounterRng& rng) {
    ops::require_rank(logits, 1, "sample_categorical");
    if (logits.size() == 0) throw ShapeError("sample_categorical: empty logits");
    if (temperature < Real(0)) {
        throw DomainError("sample_categorical: temperature must be >= 0");
    }
    if (temperature == Real(0)) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < logits.size(); ++i) {
            if (logits[i] > logits[best]) best = i;
        }
        if (logits[best] == -std::numeric_limits<Real>::infinity()) {
            throw DomainError("sample_categorical: all logits are -inf");
        }
        return int(best);
    }
    Tensor<Real> scaled(logits.shape());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
    const Tensor<Real> p = ops::softmax(scaled);  // rejects all-(-inf) rows
    const Real u = Real(rng.next_unit());
    Real cum = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        cum += p[i];
        if (u < cum) return int(i);
    }
    return int(p.size() - 1);  // rounding slack lands on the last bucket
}

/// Consume the prompt step by step, then emit up to max_new sampled tokens.
/// Deterministic given the seed.
template <typename Real>
std::vector<int> generate(const ModelParams<Real>& params, std::span<const int> prompt,
                          std::size_t max_new, Real temperature, std::uint64_t seed) {
    if (prompt.empty()) throw DomainError("generate: prompt must be nonempty");
    DecodeSession<Real> session = DecodeSession<Real>::start(params, temperature, seed);
    Tensor<Real> logits;
    for (int token : prompt) logits = decode_step(params, session, token);
    std::vector<int> out(prompt.begin(), prompt.end());
    out.reserve(prompt.size() + max_new);
    for (std::size_t i = 0; i < max_new; ++i) {
        const int token = sample_categorical(logits, temperature, session.rng);
        out.push_back(token);
        session.tokens_emitted += 1;
        logits = decode_step(params, session, token);
    }
    return out;
}

}  // namespace ssdlm
