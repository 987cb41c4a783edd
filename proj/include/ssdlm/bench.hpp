#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ssdlm/attention.hpp"
#include "ssdlm/generation.hpp"
#include "ssdlm/model.hpp"

// Decode microbenchmark: per-token latency and throughput for the SSD model
// against the parameter-matched attention baseline, bucketed by generation
// length. Monotonic clock, one discarded warmup run, median of repeats.

namespace ssdlm {

struct Bucket {
    std::size_t lo = 0;
    std::size_t hi = 0;
};

enum class BenchArch { Ssd, Attn, Both };

struct BenchSettings {
    std::vector<Bucket> buckets{{0, 64}, {64, 128}, {128, 256}, {256, 512}};
    std::size_t repeats = 5;
    std::size_t precision_bits = 32;  // correctness suites stay in 64-bit
    BenchArch arch = BenchArch::Both;
    std::size_t concurrency = 1;
    int prompt_token = 'a';
    std::uint64_t seed = 1;

    void validate(std::size_t max_seq_len) const {
        if (repeats < 3) throw DomainError("bench: repeats must be >= 3");
        if (concurrency < 1) throw DomainError("bench: concurrency must be >= 1");
        if (precision_bits != 32 && precision_bits != 64) {
            throw DomainError("bench: precision must be 32 or 64");
        }
        if (buckets.empty()) throw DomainError("bench: no buckets");
        std::size_t prev_hi = 0;
        for (std::size_t i = 0; i < buckets.size(); ++i) {
            const Bucket& b = buckets[i];
            if (b.lo >= b.hi) {
                throw DomainError("bench: bucket [" + std::to_string(b.lo) + "," +
                                  std::to_string(b.hi) + ") is empty");
            }
            if (i > 0 && b.lo < prev_hi) {
                throw DomainError("bench: buckets must be ascending and non-overlapping");
            }
            if (b.hi > max_seq_len) {
                throw DomainError("bench: bucket end " + std::to_string(b.hi) +
                                  " exceeds max_seq_len " + std::to_string(max_seq_len));
            }
            prev_hi = b.hi;
        }
    }
};

struct BenchRow {
    std::string arch;
    std::size_t bucket_lo = 0;
    std::size_t bucket_hi = 0;
    double tok_per_s = 0;
    double ns_per_tok = 0;
    std::size_t state_bytes = 0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::size_t precision_bits = 32;
    std::uint64_t seed = 0;
    std::string timestamp;
    std::string config_summary;
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct RunStats {
    double median_ns = 0;
    double tok_per_s = 0;
    std::size_t state_bytes = 0;
};

/// Decode `hi` tokens from a one-token prompt, timing positions in [lo, hi).
/// Step `pos` consumes the token at position pos and samples the next one.
template <typename Real, typename Step>
RunStats timed_run(const Bucket& bucket, int prompt_token, std::uint64_t seed, Step&& step) {
    using clock = std::chrono::steady_clock;
    CounterRng sampler(seed);
    std::vector<double> ns;
    ns.reserve(bucket.hi - bucket.lo);
    int token = prompt_token;
    double total_ns = 0;
    for (std::size_t pos = 0; pos < bucket.hi; ++pos) {
        const auto t0 = clock::now();
        const Tensor<Real> logits = step(token);
        token = sample_categorical(logits, Real(1), sampler);
        const auto t1 = clock::now();
        if (pos >= bucket.lo) {
            const double d = double(
                std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
            ns.push_back(d);
            total_ns += d;
        }
    }
    RunStats stats;
    stats.median_ns = median(std::move(ns));
    stats.tok_per_s = double(bucket.hi - bucket.lo) * 1e9 / total_ns;
    return stats;
}

template <typename Real>
RunStats ssd_run(const ModelParams<Real>& params, const Bucket& bucket, int prompt_token,
                 std::uint64_t seed) {
    auto session = DecodeSession<Real>::start(params, Real(1), seed);
    const std::size_t fresh_bytes = session.byte_size();
    RunStats stats = timed_run<Real>(bucket, prompt_token, seed, [&](int token) {
        return decode_step(params, session, token);
    });
    stats.state_bytes = session.byte_size();
    if (stats.state_bytes != fresh_bytes) {
        throw NumericError("bench: SSD session memory changed during decode");
    }
    return stats;
}

template <typename Real>
RunStats attn_run(const AttnParams<Real>& params, const Bucket& bucket, int prompt_token,
                  std::uint64_t seed) {
    auto cache = KvCache<Real>::fresh(params.config);
    const std::size_t per_step =
        2 * params.config.num_layers * params.config.inner_width() * sizeof(Real);
    RunStats stats = timed_run<Real>(bucket, prompt_token, seed, [&](int token) {
        return attn_decode_step(params, cache, token);
    });
    stats.state_bytes = cache.byte_size();
    if (stats.state_bytes != bucket.hi * per_step) {
        throw NumericError("bench: KV cache bytes diverged from exact accounting");
    }
    return stats;
}

/// Median-of-repeats for one architecture/bucket; with concurrency > 1 the
/// repeats run as parallel sessions and throughput aggregates over them.
template <typename Runner>
BenchRow measure(const std::string& arch, const Bucket& bucket,
                 const BenchSettings& settings, Runner&& runner) {
    runner(settings.seed ^ 0xBE7C);  // warmup, discarded
    std::vector<double> medians, throughputs;
    std::size_t state_bytes = 0;
    if (settings.concurrency <= 1) {
        for (std::size_t rep = 0; rep < settings.repeats; ++rep) {
            const RunStats stats = runner(settings.seed + rep);
            medians.push_back(stats.median_ns);
            throughputs.push_back(stats.tok_per_s);
            state_bytes = stats.state_bytes;
        }
    } else {
        std::vector<RunStats> all(settings.concurrency);
        using clock = std::chrono::steady_clock;
        const auto t0 = clock::now();
        std::vector<std::thread> workers;
        for (std::size_t k = 0; k < settings.concurrency; ++k) {
            workers.emplace_back(
                [&, k] { all[k] = runner(settings.seed + k); });
        }
        for (auto& w : workers) w.join();
        const double wall_s =
            std::chrono::duration<double>(clock::now() - t0).count();
        const double timed_tokens =
            double(settings.concurrency) * double(bucket.hi - bucket.lo);
        for (const RunStats& stats : all) {
            medians.push_back(stats.median_ns);
            state_bytes = stats.state_bytes;
        }
        throughputs.push_back(timed_tokens / wall_s);
    }
    BenchRow row;
    row.arch = arch;
    row.bucket_lo = bucket.lo;
    row.bucket_hi = bucket.hi;
    row.ns_per_tok = median(std::move(medians));
    row.tok_per_s = median(std::move(throughputs));
    row.state_bytes = state_bytes;
    return row;
}

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

}  // namespace detail

template <typename Real>
BenchReport run_bench_typed(const ModelConfig& model_config, const BenchSettings& settings) {
    settings.validate(model_config.max_seq_len);
    if (settings.prompt_token < 0 ||
        std::size_t(settings.prompt_token) >= model_config.vocab_size) {
        throw DomainError("bench: prompt token " + std::to_string(settings.prompt_token) +
                          " out of range for vocab " +
                          std::to_string(model_config.vocab_size));
    }
    const AttnConfig attn_config = AttnConfig::matched_to(model_config);

    BenchReport report;
    report.precision_bits = settings.precision_bits;
    report.seed = settings.seed;
    report.timestamp = detail::utc_timestamp();
    {
        std::ostringstream os;
        os << "ssd V=" << model_config.vocab_size << " d=" << model_config.embed_dim
           << " N=" << model_config.state_dim << " P=" << model_config.proj_dim
           << " L=" << model_config.num_layers << " | attn L=" << attn_config.num_layers
           << " m=" << attn_config.inner_width() << " F=" << attn_config.ffn_dim;
        report.config_summary = os.str();
    }

    if (settings.arch != BenchArch::Attn) {
        const ModelParams<Real> params = init_params<Real>(model_config);
        for (const Bucket& bucket : settings.buckets) {
            report.rows.push_back(detail::measure(
                "ssd", bucket, settings, [&](std::uint64_t seed) {
                    return detail::ssd_run(params, bucket, settings.prompt_token, seed);
                }));
        }
    }
    if (settings.arch != BenchArch::Ssd) {
        const AttnParams<Real> params = attn_init_params<Real>(attn_config);
        for (const Bucket& bucket : settings.buckets) {
            report.rows.push_back(detail::measure(
                "attn", bucket, settings, [&](std::uint64_t seed) {
                    return detail::attn_run(params, bucket, settings.prompt_token, seed);
                }));
        }
    }
    return report;
}

inline BenchReport run_bench(const ModelConfig& model_config, const BenchSettings& settings) {
    return settings.precision_bits == 64 ? run_bench_typed<double>(model_config, settings)
                                         : run_bench_typed<float>(model_config, settings);
}

/// CSV with the fixed header `arch,bucket_lo,bucket_hi,tok_per_s,ns_per_tok,
/// state_bytes`; row order follows the report.
inline void emit_report(const BenchReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("bench: cannot open '" + path + "' for writing");
    f.precision(17);  // doubles round-trip losslessly
    f << "arch,bucket_lo,bucket_hi,tok_per_s,ns_per_tok,state_bytes\n";
    for (const BenchRow& row : report.rows) {
        f << row.arch << ',' << row.bucket_lo << ',' << row.bucket_hi << ','
          << row.tok_per_s << ',' << row.ns_per_tok << ',' << row.state_bytes << '\n';
    }
    if (!f) throw IoError("bench: write failed for '" + path + "'");
}

}  // namespace ssdlm
