#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ssdlm/bench.hpp"
#include "ssdlm/model.hpp"
#include "ssdlm/training.hpp"

// Line-oriented `key = value` run configuration with `#` comments. Unknown
// keys are hard errors so typos cannot silently fall back to defaults; every
// parse error names the offending line.

namespace ssdlm {

struct RunConfig {
    ModelConfig model = ModelConfig::desk_default();
    OptimizerConfig opt;
    BenchSettings bench;
    std::vector<std::string> corpus_paths;
    std::string checkpoint_path = "model.ssdc";
    std::string loss_csv_path = "loss.csv";
    std::string bench_out_path = "bench.csv";
    bool seed_set = false;  // whether a seed came from file/flags (vs fallback)
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline std::uint64_t parse_u64(const std::string& v) {
    std::size_t used = 0;
    const std::uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return out;
}

inline double parse_f64(const std::string& v) {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return out;
}

inline std::vector<Bucket> parse_buckets(const std::string& v) {
    std::vector<Bucket> out;
    std::size_t start = 0;
    while (start <= v.size()) {
        const std::size_t comma = v.find(',', start);
        const std::string item =
            trim(v.substr(start, comma == std::string::npos ? comma : comma - start));
        if (!item.empty()) {
            const std::size_t colon = item.find(':');
            if (colon == std::string::npos) {
                throw std::invalid_argument("bucket '" + item + "' is not lo:hi");
            }
            out.push_back(Bucket{std::size_t(parse_u64(trim(item.substr(0, colon)))),
                                 std::size_t(parse_u64(trim(item.substr(colon + 1))))});
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.empty()) throw std::invalid_argument("no buckets given");
    return out;
}

inline BenchArch parse_arch(const std::string& v) {
    if (v == "ssd") return BenchArch::Ssd;
    if (v == "attn") return BenchArch::Attn;
    if (v == "both") return BenchArch::Both;
    throw std::invalid_argument("arch must be ssd, attn or both");
}

}  // namespace detail

/// Apply one key/value pair. Throws ParseError on unknown keys or bad values.
inline void apply_config_entry(RunConfig& config, const std::string& key,
                               const std::string& value) {
    using detail::parse_f64;
    using detail::parse_u64;
    try {
        if (key == "vocab_size") config.model.vocab_size = std::size_t(parse_u64(value));
        else if (key == "embed_dim") config.model.embed_dim = std::size_t(parse_u64(value));
        else if (key == "state_dim") config.model.state_dim = std::size_t(parse_u64(value));
        else if (key == "proj_dim") config.model.proj_dim = std::size_t(parse_u64(value));
        else if (key == "num_layers") config.model.num_layers = std::size_t(parse_u64(value));
        else if (key == "max_seq_len") {
            config.model.max_seq_len = std::size_t(parse_u64(value));
        } else if (key == "seed") {
            config.model.seed = parse_u64(value);
            config.bench.seed = config.model.seed;
            config.seed_set = true;
        } else if (key == "learning_rate") config.opt.learning_rate = parse_f64(value);
        else if (key == "beta1") config.opt.beta1 = parse_f64(value);
        else if (key == "beta2") config.opt.beta2 = parse_f64(value);
        else if (key == "weight_decay") config.opt.weight_decay = parse_f64(value);
        else if (key == "warmup_steps") {
            config.opt.warmup_steps = std::size_t(parse_u64(value));
        } else if (key == "grad_clip_norm") config.opt.grad_clip_norm = parse_f64(value);
        else if (key == "batch_size") config.opt.batch_size = std::size_t(parse_u64(value));
        else if (key == "total_steps") config.opt.total_steps = std::size_t(parse_u64(value));
        else if (key == "corpus") config.corpus_paths.push_back(value);
        else if (key == "checkpoint") config.checkpoint_path = value;
        else if (key == "loss_csv") config.loss_csv_path = value;
        else if (key == "bench_out") config.bench_out_path = value;
        else if (key == "buckets") config.bench.buckets = detail::parse_buckets(value);
        else if (key == "repeats") config.bench.repeats = std::size_t(parse_u64(value));
        else if (key == "precision") {
            config.bench.precision_bits = std::size_t(parse_u64(value));
        } else if (key == "arch") config.bench.arch = detail::parse_arch(value);
        else if (key == "concurrency") {
            config.bench.concurrency = std::size_t(parse_u64(value));
        } else {
            throw ParseError("unknown key '" + key + "'");
        }
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError("bad value '" + value + "' for key '" + key + "': " + e.what());
    }
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open '" + path + "'");
    RunConfig config;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string stripped = detail::trim(line);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": expected 'key = value'");
        }
        const std::string key = detail::trim(stripped.substr(0, eq));
        const std::string value = detail::trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": empty key");
        }
        try {
            apply_config_entry(config, key, value);
        } catch (const ParseError& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return config;
}

}  // namespace ssdlm
