#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <string>
#include <vector>

#include "ssdlm/rng.hpp"
#include "ssdlm/ssd_layer.hpp"
#include "ssdlm/training.hpp"

// Self-verification suites behind `ssdlm check`: dual-form equivalence of
// the SSD layer, transition-matrix algebra, and end-to-end gradient
// correctness. Each suite samples its own random instances and reports the
// worst observed error against a fixed tolerance.

namespace ssdlm {

struct SuiteResult {
    std::string name;
    double max_err = 0;
    double tolerance = 0;
    bool pass = false;
    std::string detail;
};

namespace detail {

template <typename Real>
Tensor<Real> random_tensor(Shape shape, CounterRng& rng, double scale = 1.0) {
    Tensor<Real> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = Real(scale * rng.next_gaussian());
    return t;
}

inline SsdLayerParams<double> random_layer(std::size_t d, std::size_t n, std::size_t p,
                                           CounterRng& rng) {
    SsdLayerParams<double> params;
    params.embed_dim = d;
    params.state_dim = n;
    params.proj_dim = p;
    params.w_in = random_tensor<double>({d, 1 + 2 * n + p}, rng, 1.0 / std::sqrt(double(d)));
    params.bias = random_tensor<double>({1 + 2 * n + p}, rng, 0.1);
    return params;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3e", v);
    return buf;
}

}  // namespace detail

/// Recurrent step loop vs forward_naive vs forward_chunked over random
/// (params, input) pairs with T <= 64 and d, N, P <= 16.
inline SuiteResult check_dual_form(std::uint64_t seed, std::size_t trials = 20) {
    const CounterRng base = CounterRng(seed).split(0xD0A1);
    double worst_recurrent = 0, worst_chunked = 0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        CounterRng rng = base.split(trial);
        const std::size_t t = 1 + rng.next_below(64);
        const std::size_t d = 1 + rng.next_below(16);
        const std::size_t n = 1 + rng.next_below(16);
        const std::size_t p = 1 + rng.next_below(16);
        const SsdLayerParams<double> params = detail::random_layer(d, n, p, rng);
        const Tensor<double> e = detail::random_tensor<double>({t, d}, rng);

        const Tensor<double> naive = forward_naive(params, e);
        auto state = RecurrentState<double>::fresh(p, n);
        Tensor<double> loop({t, p});
        for (std::size_t i = 0; i < t; ++i) {
            const Tensor<double> yi = step(params, state, ops::row(e, i));
            for (std::size_t j = 0; j < p; ++j) loop.at(i, j) = yi[j];
        }
        worst_recurrent = std::max(worst_recurrent, detail::max_abs_diff(naive, loop));
        for (std::size_t q : {std::size_t(1), std::size_t(4), std::size_t(16), t}) {
            if (q > t) continue;
            worst_chunked = std::max(worst_chunked,
                                     detail::max_abs_diff(forward_chunked(params, e, q), naive));
        }
    }
    SuiteResult result;
    result.name = "dual-form equivalence";
    result.tolerance = 1e-10;
    result.max_err = std::max(worst_recurrent, worst_chunked);
    result.pass = result.max_err <= result.tolerance;
    result.detail = "recurrent vs naive " + detail::sci(worst_recurrent) +
                    ", chunked vs naive " + detail::sci(worst_chunked);
    return result;
}

/// Lower-triangularity and unit diagonal (exact), semigroup identity
/// (1e-12) and column monotonicity for random decay vectors with T <= 128.
inline SuiteResult check_transition_algebra(std::uint64_t seed, std::size_t trials = 100) {
    const CounterRng base = CounterRng(seed).split(0x7121);
    double worst_semigroup = 0;
    bool structure_ok = true;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        CounterRng rng = base.split(trial);
        const std::size_t t = 1 + rng.next_below(128);
        Tensor<double> a({t});
        for (std::size_t i = 0; i < t; ++i) a[i] = 0.001 + 0.999 * rng.next_unit();
        const TransitionMatrix<double> tm = build_transition_matrix(a);
        for (std::size_t j = 0; j < t && structure_ok; ++j) {
            if (tm.m.at(j, j) != 1.0) structure_ok = false;
            for (std::size_t i = j + 1; i < t; ++i) {
                if (tm.m.at(j, i) != 0.0) structure_ok = false;
            }
        }
        for (std::size_t i = 0; i < t && structure_ok; ++i) {
            for (std::size_t j = i; j + 1 < t; ++j) {
                if (tm.m.at(j + 1, i) > tm.m.at(j, i)) structure_ok = false;
                if (tm.m.at(j, i) < 0.0 || tm.m.at(j, i) > 1.0) structure_ok = false;
            }
        }
        for (std::size_t k = 0; k < t; ++k) {
            for (std::size_t j = 0; j <= k; ++j) {
                for (std::size_t i = 0; i <= j; ++i) {
                    worst_semigroup =
                        std::max(worst_semigroup,
                                 std::abs(tm.m.at(k, i) - tm.m.at(k, j) * tm.m.at(j, i)));
                }
            }
        }
    }
    SuiteResult result;
    result.name = "transition-matrix algebra";
    result.tolerance = 1e-12;
    result.max_err = worst_semigroup;
    result.pass = structure_ok && worst_semigroup <= result.tolerance;
    result.detail = std::string("structure ") + (structure_ok ? "exact" : "VIOLATED") +
                    ", semigroup max dev " + detail::sci(worst_semigroup);
    return result;
}

/// Finite-difference gradient verification over random tiny model configs.
inline SuiteResult check_gradients(std::uint64_t seed, std::size_t configs = 3) {
    const CounterRng base = CounterRng(seed).split(0x96AD);
    double worst = 0;
    std::string worst_at;
    for (std::size_t trial = 0; trial < configs; ++trial) {
        CounterRng rng = base.split(trial);
        ModelConfig config;
        config.vocab_size = 3 + rng.next_below(4);
        config.embed_dim = 2 + rng.next_below(3);
        config.state_dim = 1 + rng.next_below(3);
        config.proj_dim = 1 + rng.next_below(3);
        config.num_layers = 1 + rng.next_below(2);
        config.max_seq_len = 8;
        config.seed = rng.next_u64();
        const GradCheckReport report = grad_check(config, rng.next_u64(), 6);
        if (report.max_rel_error > worst) {
            worst = report.max_rel_error;
            worst_at = report.worst_param;
        }
    }
    SuiteResult result;
    result.name = "gradient correctness";
    result.tolerance = 1e-5;
    result.max_err = worst;
    result.pass = worst <= result.tolerance;
    result.detail = "worst at " + (worst_at.empty() ? std::string("-") : worst_at);
    return result;
}

inline std::vector<SuiteResult> run_all_checks(std::uint64_t seed) {
    return {check_dual_form(seed), check_transition_algebra(seed), check_gradients(seed)};
}

}  // namespace ssdlm
