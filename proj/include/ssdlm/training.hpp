#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ssdlm/autodiff.hpp"
#include "ssdlm/checkpoint.hpp"
#include "ssdlm/model.hpp"
#include "ssdlm/rng.hpp"

// Next-token cross-entropy training: AdamW with decoupled weight decay,
// linear warmup then constant learning rate, global-norm gradient clipping,
// and a finite-difference gradient verifier.

namespace ssdlm {

struct OptimizerConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.01;
    std::size_t warmup_steps = 100;
    double grad_clip_norm = 1.0;
    std::size_t batch_size = 1;
    std::size_t total_steps = 300;

    void validate() const {
        if (!(learning_rate > 0)) throw DomainError("optimizer: learning_rate must be > 0");
        if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) {
            throw DomainError("optimizer: betas must lie in (0, 1)");
        }
        if (batch_size < 1) throw DomainError("optimizer: batch_size must be >= 1");
    }
};

/// Scale gradients in place so the global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
template <typename Real>
double clip_global_norm(std::span<Tensor<Real>*> grads, double max_norm) {
    double sq = 0;
    for (const Tensor<Real>* g : grads) {
        for (std::size_t i = 0; i < g->size(); ++i) sq += double((*g)[i]) * double((*g)[i]);
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const Real factor = Real(max_norm / norm);
        for (Tensor<Real>* g : grads) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] *= factor;
        }
    }
    return norm;
}

/// AdamW over an ordered parameter list. Moment tensors mirror parameter
/// shapes; steps are 1-indexed (bias correction needs t >= 1).
template <typename Real>
class AdamW {
public:
    explicit AdamW(OptimizerConfig config) : config_(std::move(config)) {
        config_.validate();
    }

    const OptimizerConfig& config() const { return config_; }
    std::size_t step() const { return step_; }

    double lr_at(std::size_t step) const {
        const double ramp =
            config_.warmup_steps == 0
                ? 1.0
                : std::min(1.0, double(step) / double(config_.warmup_steps));
        return config_.learning_rate * ramp;
    }

    /// One update. `params` and `grads` are aligned; gradients are clipped
    /// in place. Returns the pre-clip global gradient norm.
    double apply(std::span<Tensor<Real>*> params, std::span<Tensor<Real>*> grads) {
        if (params.size() != grads.size()) {
            throw ShapeError("adamw: " + std::to_string(params.size()) + " params vs " +
                             std::to_string(grads.size()) + " grads");
        }
        if (m_.empty()) {
            for (const Tensor<Real>* p : params) {
                m_.push_back(Tensor<Real>::zeros(p->shape()));
                v_.push_back(Tensor<Real>::zeros(p->shape()));
            }
        }
        const double pre_clip = clip_global_norm(grads, config_.grad_clip_norm);
        step_ += 1;
        const double lr = lr_at(step_);
        const double bc1 = 1.0 - std::pow(config_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(config_.beta2, double(step_));
        constexpr double eps = 1e-8;
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor<Real>& p = *params[k];
            const Tensor<Real>& g = *grads[k];
            require_same_shape(p, g, "adamw");
            Tensor<Real>& m = m_[k];
            Tensor<Real>& v = v_[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = Real(config_.beta1) * m[i] + Real(1.0 - config_.beta1) * g[i];
                v[i] = Real(config_.beta2) * v[i] + Real(1.0 - config_.beta2) * g[i] * g[i];
                const double mhat = double(m[i]) / bc1;
                const double vhat = double(v[i]) / bc2;
                const double update =
                    mhat / (std::sqrt(vhat) + eps) + config_.weight_decay * double(p[i]);
                p[i] -= Real(lr * update);
            }
        }
        return pre_clip;
    }

private:
    OptimizerConfig config_;
    std::size_t step_ = 0;
    std::vector<Tensor<Real>> m_;
    std::vector<Tensor<Real>> v_;
};

template <typename Real>
struct TrainState {
    AdamW<Real> opt;
    std::size_t step = 0;
    double last_loss = 0;
    double last_grad_norm = 0;

    explicit TrainState(OptimizerConfig config) : opt(std::move(config)) {}
};

/// Named gradients for one batch, aligned with ModelParams::for_each_param.
template <typename Real>
struct LossAndGrads {
    double loss = 0;
    std::vector<std::string> names;
    std::vector<Tensor<Real>> grads;
};

/// Mean next-token cross-entropy over a batch of token sequences (each of
/// length >= 2: inputs are seq[0..n-2], targets seq[1..n-1]), plus gradients
/// from one reverse sweep over a shared parameter lift.
template <typename Real>
LossAndGrads<Real> loss_and_grads(const ModelParams<Real>& params,
                                  std::span<const std::vector<int>> batch,
                                  std::size_t chunk = kDefaultChunk) {
    if (batch.empty()) throw DomainError("loss_and_grads: empty batch");
    Tape<Real> tape;
    const ModelParamNodes<Real> nodes = lift_params(tape, params);
    NodeId total{};
    for (const std::vector<int>& seq : batch) {
        if (seq.size() < 2) {
            throw DomainError("loss_and_grads: sequence needs >= 2 tokens");
        }
        const std::span<const int> inputs(seq.data(), seq.size() - 1);
        const std::span<const int> targets(seq.data() + 1, seq.size() - 1);
        NodeId logits = logits_graph(tape, params.config, nodes, inputs, chunk);
        NodeId loss = tape.cross_entropy(logits, targets);
        total = total.valid() ? tape.add(total, loss) : loss;
    }
    if (batch.size() > 1) total = tape.scale(total, Real(1.0 / double(batch.size())));
    tape.backward(total);

    LossAndGrads<Real> out;
    out.loss = double(tape.value(total).item());
    out.names = nodes.names;
    out.grads.reserve(nodes.ordered.size());
    for (NodeId id : nodes.ordered) out.grads.push_back(tape.grad(id));
    return out;
}

namespace detail {

template <typename Real>
[[noreturn]] void rethrow_with_param_diagnostic(const ModelParams<Real>& params,
                                                const char* what) {
    std::string offender = "none (non-finite arose in activations)";
    params.for_each_param([&](const std::string& name, const Tensor<Real>& t) {
        if (offender.starts_with("none")) {
            for (std::size_t i = 0; i < t.size(); ++i) {
                if (!std::isfinite(double(t[i]))) {
                    offender = name + "[" + std::to_string(i) + "]";
                    return;
                }
            }
        }
    });
    throw NumericError("train_step: numeric failure (" + std::string(what) +
                       "); first non-finite parameter: " + offender);
}

}  // namespace detail

/// One optimization step; updates params and state in place, returns the loss.
template <typename Real>
double train_step(ModelParams<Real>& params, TrainState<Real>& state,
                  std::span<const std::vector<int>> batch,
                  std::size_t chunk = kDefaultChunk) {
    LossAndGrads<Real> lg;
    try {
        lg = loss_and_grads(params, batch, chunk);
    } catch (const NumericError& e) {
        detail::rethrow_with_param_diagnostic(params, e.what());
    }
    for (std::size_t k = 0; k < lg.grads.size(); ++k) {
        for (std::size_t i = 0; i < lg.grads[k].size(); ++i) {
            if (!std::isfinite(double(lg.grads[k][i]))) {
                throw NumericError("train_step: non-finite gradient in " + lg.names[k] +
                                   "[" + std::to_string(i) + "]");
            }
        }
    }
    std::vector<Tensor<Real>*> param_ptrs;
    params.for_each_param(
        [&](const std::string&, Tensor<Real>& t) { param_ptrs.push_back(&t); });
    std::vector<Tensor<Real>*> grad_ptrs;
    for (Tensor<Real>& g : lg.grads) grad_ptrs.push_back(&g);
    state.last_grad_norm = state.opt.apply(param_ptrs, grad_ptrs);
    state.step = state.opt.step();
    state.last_loss = lg.loss;
    return lg.loss;
}

/// Test fixture for the verifier's negative control: adds `delta` to one
/// analytic gradient entry before comparison.
struct GradFault {
    std::string param;
    std::size_t index = 0;
    double delta = 0;
};

struct GradCheckReport {
    double max_rel_error = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    bool pass = false;
    std::size_t params_checked = 0;
};

/// Central finite differences (h = 1e-5) of the batch loss against the tape
/// gradients, entry by entry over every parameter. Relative error metric is
/// |analytic - numeric| / max(1, |numeric|); PASS iff max <= 1e-5.
inline GradCheckReport grad_check(const ModelConfig& config, std::uint64_t data_seed,
                                  std::size_t seq_len = 6, const GradFault* fault = nullptr) {
    constexpr double h = 1e-5;
    constexpr double tol = 1e-5;

    ModelParams<double> params = init_params<double>(config);
    CounterRng rng = CounterRng(data_seed).split(0xDA7A);
    std::vector<int> seq(seq_len + 1);
    for (int& id : seq) id = int(rng.next_below(config.vocab_size));
    const std::vector<std::vector<int>> batch{seq};
    const std::size_t chunk = std::max<std::size_t>(1, std::min(kDefaultChunk, seq_len / 2));

    LossAndGrads<double> lg = loss_and_grads(params, batch, chunk);
    if (fault != nullptr) {
        for (std::size_t k = 0; k < lg.names.size(); ++k) {
            if (lg.names[k] == fault->param) lg.grads[k][fault->index] += fault->delta;
        }
    }

    GradCheckReport report;
    std::size_t k = 0;
    params.for_each_param([&](const std::string& name, Tensor<double>& t) {
        const Tensor<double>& analytic = lg.grads[k++];
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t[i];
            t[i] = saved + h;
            const double up = loss_and_grads(params, batch, chunk).loss;
            t[i] = saved - h;
            const double down = loss_and_grads(params, batch, chunk).loss;
            t[i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double rel =
                std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = name;
                report.worst_index = i;
            }
            report.params_checked += 1;
        }
    });
    report.pass = report.max_rel_error <= tol;
    return report;
}

struct TrainOptions {
    std::string loss_csv_path;    // empty: no CSV
    std::string checkpoint_path;  // empty: no checkpoint
    std::size_t chunk = kDefaultChunk;
    std::size_t log_every = 0;  // 0: silent
    std::ostream* log = nullptr;
};

struct TrainResult {
    std::vector<double> losses;  // one per step
    std::vector<double> lrs;
    ModelParams<double> params;  // final weights
};

inline void write_loss_csv(const std::string& path, const TrainResult& result) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("loss csv: cannot open '" + path + "' for writing");
    f << "step,loss,lr\n";
    for (std::size_t i = 0; i < result.losses.size(); ++i) {
        f << (i + 1) << ',' << result.losses[i] << ',' << result.lrs[i] << '\n';
    }
    if (!f) throw IoError("loss csv: write failed for '" + path + "'");
}

/// Full training run over a raw-byte corpus: full-length windows
/// (max_seq_len + 1 bytes) sampled at seeded random offsets, one optimizer
/// step per batch. Deterministic given config.seed.
inline TrainResult train(const std::vector<unsigned char>& corpus, const ModelConfig& config,
                         const OptimizerConfig& opt_config, const TrainOptions& options = {}) {
    config.validate();
    opt_config.validate();
    const std::size_t window = config.max_seq_len + 1;
    if (corpus.size() < window) {
        throw DomainError("train: corpus has " + std::to_string(corpus.size()) +
                          " bytes; need at least max_seq_len + 1 = " +
                          std::to_string(window));
    }

    ModelParams<double> params = init_params<double>(config);
    TrainState<double> state{opt_config};
    const CounterRng sampler = CounterRng(config.seed).split(0x0FF5E7);

    TrainResult result;
    result.losses.reserve(opt_config.total_steps);
    for (std::size_t step = 1; step <= opt_config.total_steps; ++step) {
        CounterRng step_rng = sampler.split(step);
        std::vector<std::vector<int>> batch(opt_config.batch_size);
        for (auto& seq : batch) {
            const std::size_t offset = step_rng.next_below(corpus.size() - window + 1);
            seq.resize(window);
            for (std::size_t i = 0; i < window; ++i) seq[i] = int(corpus[offset + i]);
        }
        const double loss = train_step(params, state, batch, options.chunk);
        result.losses.push_back(loss);
        result.lrs.push_back(state.opt.lr_at(step));
        if (options.log_every && options.log && step % options.log_every == 0) {
            (*options.log) << "step " << step << "  loss " << loss << "  lr "
                           << state.opt.lr_at(step) << "  |g| " << state.last_grad_norm
                           << '\n';
        }
    }

    if (!options.loss_csv_path.empty()) write_loss_csv(options.loss_csv_path, result);
    if (!options.checkpoint_path.empty()) save_checkpoint(params, options.checkpoint_path);
    result.params = std::move(params);
    return result;
}

}  // namespace ssdlm
