// ssdlm — train, sample, verify and benchmark a byte-level SSD language
// model against its attention baseline.
//
// Exit codes: 0 success, 1 usage/IO/validation failure, 2 numeric abort
// during training, 3 verification-suite failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssdlm/bench.hpp"
#include "ssdlm/check.hpp"
#include "ssdlm/checkpoint.hpp"
#include "ssdlm/config.hpp"
#include "ssdlm/generation.hpp"
#include "ssdlm/training.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitCheckFailed = 3;

std::vector<unsigned char> read_corpus(const std::vector<std::string>& paths) {
    if (paths.empty()) {
        throw ssdlm::IoError("no corpus given (use --corpus or a 'corpus =' config line)");
    }
    std::vector<unsigned char> bytes;
    for (const std::string& path : paths) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw ssdlm::IoError("cannot open corpus file '" + path + "'");
        bytes.insert(bytes.end(), std::istreambuf_iterator<char>(f),
                     std::istreambuf_iterator<char>());
    }
    return bytes;
}

// Seed precedence: --seed flag > config file > SSD_SEED env > built-in.
void resolve_seed(ssdlm::RunConfig& config, bool flag_set, std::uint64_t flag_seed) {
    if (flag_set) {
        config.model.seed = flag_seed;
        config.bench.seed = flag_seed;
        return;
    }
    if (config.seed_set) return;
    if (const char* env = std::getenv("SSD_SEED")) {
        try {
            const std::uint64_t seed = ssdlm::detail::parse_u64(env);
            config.model.seed = seed;
            config.bench.seed = seed;
        } catch (const std::exception&) {
            throw ssdlm::ParseError(std::string("SSD_SEED is not an integer: '") + env +
                                    "'");
        }
    }
}

struct TrainCli {
    std::string config_path;
    std::vector<std::string> corpus;
    std::string checkpoint;
    std::string loss_csv;
    std::uint64_t steps = 0;
    std::uint64_t batch_size = 0;
    double learning_rate = 0;
    std::uint64_t seed = 0;
    std::uint64_t log_every = 25;
};

int cmd_train(const TrainCli& cli, const CLI::App& app) {
    ssdlm::RunConfig config;
    if (!cli.config_path.empty()) config = ssdlm::parse_config_file(cli.config_path);
    if (app.count("--corpus")) config.corpus_paths = cli.corpus;
    if (app.count("--checkpoint")) config.checkpoint_path = cli.checkpoint;
    if (app.count("--loss-csv")) config.loss_csv_path = cli.loss_csv;
    if (app.count("--steps")) config.opt.total_steps = std::size_t(cli.steps);
    if (app.count("--batch-size")) config.opt.batch_size = std::size_t(cli.batch_size);
    if (app.count("--lr")) config.opt.learning_rate = cli.learning_rate;
    resolve_seed(config, app.count("--seed") > 0, cli.seed);

    const std::vector<unsigned char> corpus = read_corpus(config.corpus_paths);
    std::cerr << "training: " << corpus.size() << " corpus bytes, "
              << ssdlm::count_params(config.model) << " params, "
              << config.opt.total_steps << " steps\n";

    ssdlm::TrainOptions options;
    options.loss_csv_path = config.loss_csv_path;
    options.checkpoint_path = config.checkpoint_path;
    options.log_every = std::size_t(cli.log_every);
    options.log = &std::cerr;
    const ssdlm::TrainResult result =
        ssdlm::train(corpus, config.model, config.opt, options);
    std::cerr << "final loss " << result.losses.back() << "; checkpoint written to "
              << config.checkpoint_path << "\n";
    return kExitOk;
}

struct GenerateCli {
    std::string checkpoint;
    std::string prompt;
    std::uint64_t max_new = 64;
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

int cmd_generate(const GenerateCli& cli, const CLI::App& app) {
    if (cli.prompt.empty()) {
        std::cerr << "generate: prompt must be nonempty\n";
        return kExitUsage;
    }
    const ssdlm::ModelParams<double> params = ssdlm::load_checkpoint(cli.checkpoint);

    std::uint64_t seed = cli.seed;
    if (!app.count("--seed")) {
        if (const char* env = std::getenv("SSD_SEED")) {
            seed = ssdlm::detail::parse_u64(env);
        }
    }

    // Byte-level tokenizer: each prompt byte is one token id in [0, 256).
    std::vector<int> prompt;
    prompt.reserve(cli.prompt.size());
    for (unsigned char b : cli.prompt) prompt.push_back(int(b));

    const std::vector<int> out = ssdlm::generate(params, prompt, std::size_t(cli.max_new),
                                                 cli.temperature, seed);
    // Emit only the continuation, as raw bytes.
    std::string text;
    for (std::size_t i = prompt.size(); i < out.size(); ++i) {
        text.push_back(char((unsigned char)(out[i])));
    }
    std::fwrite(text.data(), 1, text.size(), stdout);
    std::fflush(stdout);
    return kExitOk;
}

int cmd_check(std::uint64_t seed) {
    const std::vector<ssdlm::SuiteResult> results = ssdlm::run_all_checks(seed);
    bool all_pass = true;
    for (const ssdlm::SuiteResult& r : results) {
        std::printf("%s: max |delta| = %.3e (tolerance %.0e): %s  [%s]\n", r.name.c_str(),
                    r.max_err, r.tolerance, r.pass ? "PASS" : "FAIL", r.detail.c_str());
        all_pass = all_pass && r.pass;
    }
    return all_pass ? kExitOk : kExitCheckFailed;
}

struct BenchCli {
    std::string config_path;
    std::string out_path;
    std::string arch;
    std::string buckets;
    std::uint64_t repeats = 0;
    std::uint64_t precision = 0;
    std::uint64_t concurrency = 0;
    std::uint64_t seed = 0;
};

int cmd_bench(const BenchCli& cli, const CLI::App& app) {
    ssdlm::RunConfig config;
    if (!cli.config_path.empty()) config = ssdlm::parse_config_file(cli.config_path);
    if (app.count("--out")) config.bench_out_path = cli.out_path;
    if (app.count("--arch")) config.bench.arch = ssdlm::detail::parse_arch(cli.arch);
    if (app.count("--buckets")) {
        config.bench.buckets = ssdlm::detail::parse_buckets(cli.buckets);
    }
    if (app.count("--repeats")) config.bench.repeats = std::size_t(cli.repeats);
    if (app.count("--precision")) config.bench.precision_bits = std::size_t(cli.precision);
    if (app.count("--concurrency")) {
        config.bench.concurrency = std::size_t(cli.concurrency);
    }
    resolve_seed(config, app.count("--seed") > 0, cli.seed);

    const ssdlm::BenchReport report = ssdlm::run_bench(config.model, config.bench);
    ssdlm::emit_report(report, config.bench_out_path);
    std::printf("# %s precision=%zu seed=%llu %s\n", report.timestamp.c_str(),
                report.precision_bits, (unsigned long long)report.seed,
                report.config_summary.c_str());
    std::printf("%-5s %11s %12s %14s %12s\n", "arch", "bucket", "tok/s", "ns/tok",
                "state_bytes");
    for (const ssdlm::BenchRow& row : report.rows) {
        std::printf("%-5s [%4zu,%4zu) %12.1f %14.1f %12zu\n", row.arch.c_str(),
                    row.bucket_lo, row.bucket_hi, row.tok_per_s, row.ns_per_tok,
                    row.state_bytes);
    }
    std::printf("csv written to %s\n", config.bench_out_path.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"byte-level SSD language model: recurrent decode, parallel training"};
    app.require_subcommand(1);

    TrainCli train_cli;
    CLI::App* train = app.add_subcommand("train", "train on raw-byte corpora");
    train->add_option("--config", train_cli.config_path, "key = value config file");
    train->add_option("--corpus", train_cli.corpus, "corpus file(s), concatenated in order");
    train->add_option("--checkpoint", train_cli.checkpoint, "output checkpoint path");
    train->add_option("--loss-csv", train_cli.loss_csv, "loss curve CSV path");
    train->add_option("--steps", train_cli.steps, "total optimizer steps");
    train->add_option("--batch-size", train_cli.batch_size, "sequences per step");
    train->add_option("--lr", train_cli.learning_rate, "base learning rate");
    train->add_option("--seed", train_cli.seed, "seed (overrides config and SSD_SEED)");
    train->add_option("--log-every", train_cli.log_every, "progress print interval (0 off)");

    GenerateCli gen_cli;
    CLI::App* gen = app.add_subcommand("generate", "sample bytes from a checkpoint");
    gen->add_option("--checkpoint", gen_cli.checkpoint, "checkpoint path")->required();
    gen->add_option("--prompt", gen_cli.prompt, "prompt text (byte tokens)")->required();
    gen->add_option("--max-new", gen_cli.max_new, "tokens to generate");
    gen->add_option("--temperature", gen_cli.temperature, "0 = greedy");
    gen->add_option("--seed", gen_cli.seed, "sampler seed");

    std::uint64_t check_seed = 1;
    CLI::App* check = app.add_subcommand("check", "run the verification suites");
    check->add_option("--seed", check_seed, "suite seed");

    BenchCli bench_cli;
    CLI::App* bench = app.add_subcommand("bench", "decode throughput: ssd vs attention");
    bench->add_option("--config", bench_cli.config_path, "key = value config file");
    bench->add_option("--out", bench_cli.out_path, "CSV output path");
    bench->add_option("--arch", bench_cli.arch, "ssd, attn or both");
    bench->add_option("--buckets", bench_cli.buckets, "e.g. 0:64,64:128,128:256,256:512");
    bench->add_option("--repeats", bench_cli.repeats, "timing repeats (>= 3)");
    bench->add_option("--precision", bench_cli.precision, "32 or 64");
    bench->add_option("--concurrency", bench_cli.concurrency, "parallel decode sessions");
    bench->add_option("--seed", bench_cli.seed, "bench seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_cli, *train);
        if (gen->parsed()) return cmd_generate(gen_cli, *gen);
        if (check->parsed()) {
            if (!check->count("--seed")) {
                if (const char* env = std::getenv("SSD_SEED")) {
                    check_seed = ssdlm::detail::parse_u64(env);
                }
            }
            return cmd_check(check_seed);
        }
        if (bench->parsed()) return cmd_bench(bench_cli, *bench);
    } catch (const ssdlm::NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
