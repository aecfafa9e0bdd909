#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mantis/errors.hpp"
#include "mantis/model.hpp"
#include "mantis/sha256.hpp"

namespace mantis {

// Self-describing parameter container:
//   MANTISCKPT1
//   key=value header lines (config.* plus caller extras), blank line,
//   then "tensor <name> <rows> <cols>" records each followed by the raw
//   little-endian float64 payload, an "end" line, and a whole-file
//   "sha256=<hex>" trailer.

namespace ckpt_detail {

constexpr const char* kMagic = "MANTISCKPT1";

inline void put_f64le(std::string& out, double v) {
    auto bits = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
}

inline double get_f64le(const std::string& in, size_t at) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<uint64_t>(static_cast<unsigned char>(in[at + static_cast<size_t>(i)]))
                << (8 * i);
    }
    return std::bit_cast<double>(bits);
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const EncoderModel& model,
                            const std::map<std::string, std::string>& extra = {}) {
    using namespace ckpt_detail;
    std::string out;
    out += kMagic;
    out += "\n";
    const auto& c = model.config;
    out += "config.n_layers=" + std::to_string(c.n_layers) + "\n";
    out += "config.hidden_size=" + std::to_string(c.hidden_size) + "\n";
    out += "config.n_heads=" + std::to_string(c.n_heads) + "\n";
    out += "config.ffn_size=" + std::to_string(c.ffn_size) + "\n";
    out += "config.vocab_size=" + std::to_string(c.vocab_size) + "\n";
    out += "config.max_positions=" + std::to_string(c.max_positions) + "\n";
    out += "config.n_classes=" + std::to_string(c.n_classes) + "\n";
    out += "config.dropout_rate=" + format_double(c.dropout_rate) + "\n";
    out += std::string("config.mlm_head=") + (c.mlm_head ? "1" : "0") + "\n";
    for (const auto& [k, v] : extra) {
        if (k.rfind("config.", 0) == 0) {
            throw BadCheckpoint("extra header key collides with config: " + k);
        }
        out += k + "=" + v + "\n";
    }
    out += "\n";
    for (const auto& [name, t] : model.named_parameters()) {
        out += "tensor " + name + " " + std::to_string(t.rows()) + " " +
               std::to_string(t.cols()) + "\n";
        for (double v : t.values()) put_f64le(out, v);
    }
    out += "end\n";
    out += "sha256=" + sha256_hex(out) + "\n";

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write checkpoint: " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("checkpoint write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw IoError("cannot move checkpoint into place: " + path);
    }
}

struct LoadedCheckpoint {
    EncoderModel model;
    std::map<std::string, std::string> header;  // non-config extras
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string data((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());

    // verify the whole-file checksum first
    size_t trailer = data.rfind("sha256=");
    if (trailer == std::string::npos || trailer == 0 ||
        data[trailer - 1] != '\n') {
        throw BadCheckpoint("missing checksum trailer");
    }
    size_t hash_end = data.find('\n', trailer);
    if (hash_end == std::string::npos) throw BadCheckpoint("truncated trailer");
    std::string stored = data.substr(trailer + 7, hash_end - trailer - 7);
    if (sha256_hex(data.data(), trailer) != stored) {
        throw BadCheckpoint("checksum mismatch; file corrupted");
    }

    size_t pos = 0;
    auto next_line = [&]() -> std::string {
        size_t nl = data.find('\n', pos);
        if (nl == std::string::npos) throw BadCheckpoint("unexpected end of file");
        std::string line = data.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };

    if (next_line() != kMagic) {
        throw BadCheckpoint("bad magic; not a checkpoint file or wrong version");
    }

    std::map<std::string, std::string> all;
    for (std::string line = next_line(); !line.empty(); line = next_line()) {
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw BadCheckpoint("bad header line: " + line);
        all[line.substr(0, eq)] = line.substr(eq + 1);
    }

    auto want = [&](const std::string& key) -> std::string {
        auto it = all.find(key);
        if (it == all.end()) throw BadCheckpoint("missing header key: " + key);
        return it->second;
    };

    EncoderConfig cfg;
    cfg.n_layers = std::stoll(want("config.n_layers"));
    cfg.hidden_size = std::stoll(want("config.hidden_size"));
    cfg.n_heads = std::stoll(want("config.n_heads"));
    cfg.ffn_size = std::stoll(want("config.ffn_size"));
    cfg.vocab_size = std::stoll(want("config.vocab_size"));
    cfg.max_positions = std::stoll(want("config.max_positions"));
    cfg.n_classes = std::stoll(want("config.n_classes"));
    cfg.dropout_rate = std::stod(want("config.dropout_rate"));
    cfg.mlm_head = want("config.mlm_head") == "1";

    LoadedCheckpoint out;
    out.model = init_model(cfg, 0);
    for (const auto& [k, v] : all) {
        if (k.rfind("config.", 0) != 0) out.header[k] = v;
    }

    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : out.model.named_parameters()) by_name.emplace(name, t);

    size_t loaded = 0;
    for (;;) {
        std::string line = next_line();
        if (line == "end") break;
        std::istringstream ss(line);
        std::string tag, name;
        int64_t rows = 0, cols = 0;
        if (!(ss >> tag >> name >> rows >> cols) || tag != "tensor") {
            throw BadCheckpoint("bad tensor record: " + line);
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) throw BadCheckpoint("unknown tensor: " + name);
        Tensor t = it->second;
        if (t.rows() != rows || t.cols() != cols) {
            throw BadCheckpoint("shape mismatch for " + name);
        }
        size_t bytes = static_cast<size_t>(rows * cols) * 8;
        if (pos + bytes > trailer) throw BadCheckpoint("payload overruns file");
        for (size_t i = 0; i < static_cast<size_t>(rows * cols); ++i) {
            t.values()[i] = get_f64le(data, pos + i * 8);
        }
        pos += bytes;
        ++loaded;
    }
    if (loaded != by_name.size()) {
        throw BadCheckpoint("checkpoint holds " + std::to_string(loaded) +
                            " tensors, model expects " +
                            std::to_string(by_name.size()));
    }
    return out;
}

}  // namespace mantis
