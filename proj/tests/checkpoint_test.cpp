#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ssdlm/checkpoint.hpp"
#include "ssdlm/model.hpp"

using ssdlm::ModelConfig;
using ssdlm::ModelParams;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab_size = 5;
    c.embed_dim = 3;
    c.state_dim = 2;
    c.proj_dim = 2;
    c.num_layers = 2;
    c.max_seq_len = 8;
    c.seed = 7;
    return c;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<unsigned char> read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Checkpoint, HeaderLayout) {
    auto params = ssdlm::init_params(tiny_config());
    auto bytes = ssdlm::serialize_checkpoint(params);
    ASSERT_GE(bytes.size(), 68u);
    EXPECT_EQ(bytes[0], 'S');
    EXPECT_EQ(bytes[1], 'S');
    EXPECT_EQ(bytes[2], 'D');
    EXPECT_EQ(bytes[3], 'C');
    // version 1, little-endian u32
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], 0);
    EXPECT_EQ(bytes[6], 0);
    EXPECT_EQ(bytes[7], 0);
    // vocab_size = 5 as first config u64
    EXPECT_EQ(bytes[8], 5);
    for (int i = 9; i < 16; ++i) EXPECT_EQ(bytes[i], 0);
    EXPECT_EQ(bytes.size(), 4u + 4 + 7 * 8 + ssdlm::count_params(tiny_config()) * 8 + 8);
}

TEST(Checkpoint, RoundTripBitIdentical) {
    auto params = ssdlm::init_params(tiny_config());
    const std::string path = temp_path("ssdlm_ckpt_roundtrip.bin");
    ssdlm::save_checkpoint(params, path);
    ModelParams<double> loaded = ssdlm::load_checkpoint(path);
    const std::string path2 = temp_path("ssdlm_ckpt_roundtrip2.bin");
    ssdlm::save_checkpoint(loaded, path2);
    EXPECT_EQ(read_all(path), read_all(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST(Checkpoint, LoadedParamsExactlyEqual) {
    auto params = ssdlm::init_params(tiny_config());
    auto loaded = ssdlm::deserialize_checkpoint(ssdlm::serialize_checkpoint(params), "mem");
    params.for_each_param([&, i = 0](const std::string& name,
                                     const ssdlm::Tensor<double>& t) mutable {
        std::vector<const ssdlm::Tensor<double>*> all;
        loaded.for_each_param([&](const std::string&, const ssdlm::Tensor<double>& lt) {
            all.push_back(&lt);
        });
        const ssdlm::Tensor<double>& other = *all[std::size_t(i++)];
        ASSERT_EQ(t.shape(), other.shape()) << name;
        for (std::size_t j = 0; j < t.size(); ++j) ASSERT_EQ(t[j], other[j]) << name;
    });
    EXPECT_EQ(loaded.config.seed, tiny_config().seed);
    EXPECT_EQ(loaded.config.max_seq_len, tiny_config().max_seq_len);
}

TEST(Checkpoint, ChecksumMismatchNamesOffset) {
    auto params = ssdlm::init_params(tiny_config());
    auto bytes = ssdlm::serialize_checkpoint(params);
    bytes[100] ^= 0xFF;
    try {
        ssdlm::deserialize_checkpoint(bytes, "corrupt");
        FAIL() << "expected IoError";
    } catch (const ssdlm::IoError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("checksum mismatch"), std::string::npos) << msg;
        EXPECT_NE(msg.find(std::to_string(bytes.size() - 8)), std::string::npos) << msg;
    }
}

TEST(Checkpoint, BadMagicAndTruncationRejected) {
    auto params = ssdlm::init_params(tiny_config());
    auto bytes = ssdlm::serialize_checkpoint(params);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(ssdlm::deserialize_checkpoint(bad, "m"), ssdlm::IoError);
    bytes.resize(bytes.size() / 2);
    EXPECT_THROW(ssdlm::deserialize_checkpoint(bytes, "m"), ssdlm::IoError);
}

TEST(Checkpoint, MissingFile) {
    EXPECT_THROW(ssdlm::load_checkpoint("/nonexistent/dir/x.bin"), ssdlm::IoError);
}
