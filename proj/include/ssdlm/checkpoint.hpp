#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ssdlm/model.hpp"
#include "ssdlm/tensor.hpp"

// Checkpoint file layout, byte-exact:
//
//   "SSDC"                         4 bytes magic
//   format version                 u32 little-endian (currently 1)
//   vocab_size, embed_dim,
//   state_dim, proj_dim,
//   num_layers, max_seq_len, seed  7 x u64 little-endian
//   tensor payload                 raw f64 little-endian, in order:
//                                    emb;
//                                    per layer: w_in, bias, w_out, gain;
//                                    final_gain; w_vocab
//   checksum                       u64 little-endian, sum of all preceding
//                                  bytes mod 2^64
//
// Round-trips are bit-identical.

namespace ssdlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((unsigned char)(v >> (8 * i)));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back((unsigned char)(v >> (8 * i)));
}

inline void put_f64(std::vector<unsigned char>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
}

inline std::uint64_t byte_sum(const unsigned char* p, std::size_t n) {
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < n; ++i) sum += p[i];
    return sum;
}

}  // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const ModelParams<double>& params) {
    std::vector<unsigned char> out;
    out.reserve(4 + 4 + 7 * 8 + params.param_count() * 8 + 8);
    out.insert(out.end(), {'S', 'S', 'D', 'C'});
    detail::put_u32(out, kCheckpointVersion);
    const ModelConfig& c = params.config;
    for (std::uint64_t v : {std::uint64_t(c.vocab_size), std::uint64_t(c.embed_dim),
                            std::uint64_t(c.state_dim), std::uint64_t(c.proj_dim),
                            std::uint64_t(c.num_layers), std::uint64_t(c.max_seq_len),
                            c.seed}) {
        detail::put_u64(out, v);
    }
    params.for_each_param([&](const std::string&, const Tensor<double>& t) {
        for (std::size_t i = 0; i < t.size(); ++i) detail::put_f64(out, t[i]);
    });
    detail::put_u64(out, detail::byte_sum(out.data(), out.size()));
    return out;
}

inline void save_checkpoint(const ModelParams<double>& params, const std::string& path) {
    const std::vector<unsigned char> bytes = serialize_checkpoint(params);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw IoError("checkpoint: write failed for '" + path + "'");
}

inline ModelParams<double> deserialize_checkpoint(const std::vector<unsigned char>& bytes,
                                                  const std::string& origin) {
    const std::size_t header = 4 + 4 + 7 * 8;
    if (bytes.size() < header + 8) {
        throw IoError("checkpoint '" + origin + "': truncated (" +
                      std::to_string(bytes.size()) + " bytes)");
    }
    if (!(bytes[0] == 'S' && bytes[1] == 'S' && bytes[2] == 'D' && bytes[3] == 'C')) {
        throw IoError("checkpoint '" + origin + "': bad magic, not an SSDC file");
    }
    const std::uint32_t version = detail::get_u32(bytes.data() + 4);
    if (version != kCheckpointVersion) {
        throw IoError("checkpoint '" + origin + "': unsupported format version " +
                      std::to_string(version));
    }
    // Validate the checksum before trusting anything else.
    const std::size_t checksum_offset = bytes.size() - 8;
    const std::uint64_t stored = detail::get_u64(bytes.data() + checksum_offset);
    const std::uint64_t actual = detail::byte_sum(bytes.data(), checksum_offset);
    if (stored != actual) {
        throw IoError("checkpoint '" + origin + "': checksum mismatch at byte offset " +
                      std::to_string(checksum_offset) + " (stored " + std::to_string(stored) +
                      ", computed " + std::to_string(actual) + ")");
    }

    ModelConfig config;
    const unsigned char* p = bytes.data() + 8;
    config.vocab_size = std::size_t(detail::get_u64(p + 0));
    config.embed_dim = std::size_t(detail::get_u64(p + 8));
    config.state_dim = std::size_t(detail::get_u64(p + 16));
    config.proj_dim = std::size_t(detail::get_u64(p + 24));
    config.num_layers = std::size_t(detail::get_u64(p + 32));
    config.max_seq_len = std::size_t(detail::get_u64(p + 40));
    config.seed = detail::get_u64(p + 48);
    config.validate();

    const std::size_t expected = header + count_params(config) * 8 + 8;
    if (bytes.size() != expected) {
        throw IoError("checkpoint '" + origin + "': size " + std::to_string(bytes.size()) +
                      " does not match config (expected " + std::to_string(expected) + ")");
    }

    ModelParams<double> params = init_params<double>(config);
    std::size_t off = header;
    params.for_each_param([&](const std::string&, Tensor<double>& t) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            t[i] = std::bit_cast<double>(detail::get_u64(bytes.data() + off));
            off += 8;
        }
    });
    return params;
}

inline ModelParams<double> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes, path);
}

}  // namespace ssdlm
