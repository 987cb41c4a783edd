#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "ssdlm/training.hpp"

using ssdlm::AdamW;
using ssdlm::CounterRng;
using ssdlm::ModelConfig;
using ssdlm::OptimizerConfig;
using ssdlm::Tensor;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 5) {
    ModelConfig c;
    c.vocab_size = 5;
    c.embed_dim = 3;
    c.state_dim = 2;
    c.proj_dim = 2;
    c.num_layers = 2;
    c.max_seq_len = 8;
    c.seed = seed;
    return c;
}

}  // namespace

TEST(OptimizerConfig, Validation) {
    ssdlm::OptimizerConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.beta1 = 1.0;
    EXPECT_THROW(cfg.validate(), ssdlm::DomainError);
    cfg = ssdlm::OptimizerConfig{};
    cfg.learning_rate = 0.0;
    EXPECT_THROW(cfg.validate(), ssdlm::DomainError);
    cfg = ssdlm::OptimizerConfig{};
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), ssdlm::DomainError);
}

TEST(AdamW, ZeroGradientsLeaveOnlyWeightDecay) {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.01;
    cfg.warmup_steps = 0;
    AdamW<double> opt(cfg);
    Tensor<double> p({3}, {1.0, -2.0, 0.5});
    Tensor<double> g({3});
    std::vector<Tensor<double>*> params{&p};
    std::vector<Tensor<double>*> grads{&g};
    opt.apply(params, grads);
    const double factor = 1.0 - 0.1 * 0.01;
    EXPECT_DOUBLE_EQ(p[0], 1.0 * factor);
    EXPECT_DOUBLE_EQ(p[1], -2.0 * factor);
    EXPECT_DOUBLE_EQ(p[2], 0.5 * factor);
}

TEST(AdamW, LinearWarmupSchedule) {
    OptimizerConfig cfg;
    cfg.learning_rate = 2e-3;
    cfg.warmup_steps = 100;
    AdamW<double> opt(cfg);
    EXPECT_DOUBLE_EQ(opt.lr_at(50), 0.5 * 2e-3);
    EXPECT_DOUBLE_EQ(opt.lr_at(100), 2e-3);
    EXPECT_DOUBLE_EQ(opt.lr_at(5000), 2e-3);
    EXPECT_DOUBLE_EQ(opt.lr_at(1), 2e-5);
}

TEST(AdamW, QuadraticToyConvergesToOptimum) {
    // min (x - 3)^2 from x = 0, gradients via the tape.
    OptimizerConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.weight_decay = 0.0;
    cfg.warmup_steps = 0;
    cfg.grad_clip_norm = 100.0;
    AdamW<double> opt(cfg);
    Tensor<double> x = Tensor<double>::scalar(0.0);
    for (int step = 0; step < 500; ++step) {
        ssdlm::Tape<double> tape;
        ssdlm::NodeId xn = tape.leaf(x);
        ssdlm::NodeId diff = tape.sub(xn, tape.leaf(Tensor<double>::scalar(3.0)));
        tape.backward(tape.mul(diff, diff));
        Tensor<double> g = tape.grad(xn);
        std::vector<Tensor<double>*> params{&x};
        std::vector<Tensor<double>*> grads{&g};
        opt.apply(params, grads);
    }
    EXPECT_NEAR(x.item(), 3.0, 1e-3);
}

TEST(AdamW, GlobalNormClipping) {
    Tensor<double> g1({2}, {3.0, 4.0});
    Tensor<double> g2({1}, {12.0});  // global norm 13
    std::vector<Tensor<double>*> grads{&g1, &g2};
    const double pre = ssdlm::clip_global_norm<double>(grads, 1.0);
    EXPECT_DOUBLE_EQ(pre, 13.0);
    double post_sq = 0;
    for (const Tensor<double>* g : grads) {
        for (std::size_t i = 0; i < g->size(); ++i) post_sq += (*g)[i] * (*g)[i];
    }
    EXPECT_LE(std::sqrt(post_sq), 1.0 + 1e-9);
    // direction preserved
    EXPECT_NEAR(g1[0] / g1[1], 3.0 / 4.0, 1e-12);
    // below the threshold nothing changes
    Tensor<double> small({1}, {0.5});
    std::vector<Tensor<double>*> one{&small};
    ssdlm::clip_global_norm<double>(one, 1.0);
    EXPECT_DOUBLE_EQ(small[0], 0.5);
}

TEST(GradCheck, TinyConfigPasses) {
    const ssdlm::GradCheckReport report = ssdlm::grad_check(tiny_config(), 17);
    EXPECT_TRUE(report.pass) << "max rel error " << report.max_rel_error << " at "
                             << report.worst_param << "[" << report.worst_index << "]";
    EXPECT_LE(report.max_rel_error, 1e-5);
    EXPECT_EQ(report.params_checked, ssdlm::count_params(tiny_config()));
}

TEST(GradCheck, CorruptedGradientLocated) {
    ssdlm::GradFault fault{"layer1.w_out", 3, 0.5};
    const ssdlm::GradCheckReport report = ssdlm::grad_check(tiny_config(), 17, 6, &fault);
    EXPECT_FALSE(report.pass);
    EXPECT_EQ(report.worst_param, "layer1.w_out");
    EXPECT_EQ(report.worst_index, 3u);
}

TEST(GradCheck, UnusedVocabRowHasExactlyZeroGradient) {
    const ModelConfig c = tiny_config();
    auto params = ssdlm::init_params(c);
    // token 4 appears nowhere in the batch
    const std::vector<std::vector<int>> batch{{0, 1, 2, 3, 0, 1}};
    auto lg = ssdlm::loss_and_grads(params, batch, 2);
    for (std::size_t k = 0; k < lg.names.size(); ++k) {
        if (lg.names[k] != "emb") continue;
        for (std::size_t j = 0; j < c.embed_dim; ++j) {
            EXPECT_EQ(lg.grads[k].at(4, j), 0.0);
        }
        for (std::size_t j = 0; j < c.embed_dim; ++j) {
            EXPECT_NE(lg.grads[k].at(0, j), 0.0);
        }
    }
}

TEST(TrainStep, LossDropsOnRepetitiveBatch) {
    auto params = ssdlm::init_params(tiny_config());
    OptimizerConfig cfg;
    cfg.learning_rate = 5e-3;
    cfg.warmup_steps = 10;
    ssdlm::TrainState<double> state{cfg};
    const std::vector<std::vector<int>> batch{{0, 1, 0, 1, 0, 1, 0}, {1, 0, 1, 0, 1, 0, 1}};
    const double first = ssdlm::train_step(params, state, batch, 3);
    double last = first;
    for (int i = 0; i < 60; ++i) last = ssdlm::train_step(params, state, batch, 3);
    EXPECT_LT(last, first * 0.5);
    EXPECT_EQ(state.step, 61u);
}

TEST(TrainStep, NaNParamsAbortNamingParameter) {
    auto params = ssdlm::init_params(tiny_config());
    params.layers[0].w_out[1] = std::numeric_limits<double>::quiet_NaN();
    OptimizerConfig cfg;
    ssdlm::TrainState<double> state{cfg};
    const std::vector<std::vector<int>> batch{{0, 1, 2}};
    try {
        ssdlm::train_step(params, state, batch, 2);
        FAIL() << "expected NumericError";
    } catch (const ssdlm::NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("layer0.w_out[1]"), std::string::npos)
            << e.what();
    }
}

TEST(Train, RefusesShortCorpus) {
    const ModelConfig c = tiny_config();
    std::vector<unsigned char> corpus(c.max_seq_len, 'a');  // one byte short
    OptimizerConfig cfg;
    cfg.total_steps = 1;
    try {
        ssdlm::train(corpus, c, cfg);
        FAIL() << "expected DomainError";
    } catch (const ssdlm::DomainError& e) {
        EXPECT_NE(std::string(e.what()).find(std::to_string(c.max_seq_len + 1)),
                  std::string::npos)
            << e.what();
    }
}

TEST(Train, DeterministicLossCurve) {
    ModelConfig c = tiny_config();
    std::vector<unsigned char> corpus;
    for (int i = 0; i < 200; ++i) corpus.push_back((unsigned char)(i % 4));
    OptimizerConfig cfg;
    cfg.total_steps = 5;
    cfg.batch_size = 2;
    auto r1 = ssdlm::train(corpus, c, cfg);
    auto r2 = ssdlm::train(corpus, c, cfg);
    ASSERT_EQ(r1.losses.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(r1.losses[i], r2.losses[i]);
}

TEST(Train, WritesLossCsv) {
    ModelConfig c = tiny_config();
    std::vector<unsigned char> corpus(300);
    for (std::size_t i = 0; i < corpus.size(); ++i) corpus[i] = (unsigned char)(i % 3);
    OptimizerConfig cfg;
    cfg.total_steps = 3;
    ssdlm::TrainOptions options;
    const std::string path =
        (std::filesystem::temp_directory_path() / "ssdlm_loss.csv").string();
    options.loss_csv_path = path;
    ssdlm::train(corpus, c, cfg, options);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    EXPECT_EQ(line, "step,loss,lr");
    int rows = 0;
    while (std::getline(f, line)) {
        if (!line.empty()) ++rows;
    }
    EXPECT_EQ(rows, 3);
    std::remove(path.c_str());
}

TEST(Train, InitialLossNearUniformBound) {
    // Fresh desk-scale init should predict near-uniform over the byte vocab.
    ModelConfig c = ModelConfig::desk_default();
    c.max_seq_len = 128;
    auto params = ssdlm::init_params(c);
    CounterRng rng(123);
    std::vector<int> seq(129);
    for (int& id : seq) id = int(rng.next_below(256));
    const std::vector<std::vector<int>> batch{seq};
    const double loss = ssdlm::loss_and_grads(params, batch).loss;
    EXPECT_NEAR(loss, std::log(256.0), 0.2);
}
