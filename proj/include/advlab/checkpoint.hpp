#pragma once

// Binary checkpoint: "ADVLAB01" | u64 LE metadata length | metadata (UTF-8 JSON) |
// f64 LE tensors (parameters in declaration order, then momentum buffers if present, then the
// SWA average if present). The metadata records every tensor shape so loads are validated.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "models.hpp"
#include "optim.hpp"
#include "serialize.hpp"

namespace advlab {

inline constexpr std::array<char, 8> kCheckpointMagic{'A', 'D', 'V', 'L', 'A', 'B', '0', '1'};
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    Model model;
    std::size_t epoch = 0;  // completed epochs
    std::uint64_t seed = 0;
    std::string config_digest;
    std::optional<OptimizerState> optimizer;
    std::optional<SwaState> swa;
    Json extra = Json::object();  // runner bookkeeping (best epoch, ...)
};

/// 64-bit FNV-1a, as 16 hex digits.
inline std::string fnv1a_hex(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xF];
    return out;
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline void put_tensor(std::string& out, const Tensor& t) {
    for (double d : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

inline Json shapes_json(const std::vector<Tensor>& ts) {
    Json a = Json::array();
    for (const auto& t : ts) a.push_back(t.shape());
    return a;
}

}  // namespace detail

inline std::string checkpoint_bytes(const Checkpoint& ck) {
    Json meta;
    meta["format_version"] = kCheckpointVersion;
    meta["model"] = to_json(ck.model.spec());
    meta["epoch"] = ck.epoch;
    meta["seed"] = ck.seed;
    meta["config_digest"] = ck.config_digest;
    meta["params"] = detail::shapes_json(ck.model.params());
    if (ck.optimizer) {
        meta["optimizer"] = {{"mu", ck.optimizer->mu},
                             {"weight_decay", ck.optimizer->weight_decay},
                             {"lr", ck.optimizer->lr},
                             {"momentum", detail::shapes_json(ck.optimizer->momentum)}};
    }
    if (ck.swa) {
        meta["swa"] = {{"count", ck.swa->count},
                       {"start_epoch", ck.swa->start_epoch},
                       {"average", detail::shapes_json(ck.swa->average)}};
    }
    meta["extra"] = ck.extra;
    const std::string text = meta.dump();
    std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    detail::put_u64(out, text.size());
    out += text;
    for (const auto& t : ck.model.params()) detail::put_tensor(out, t);
    if (ck.optimizer)
        for (const auto& t : ck.optimizer->momentum) detail::put_tensor(out, t);
    if (ck.swa)
        for (const auto& t : ck.swa->average) detail::put_tensor(out, t);
    return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes, const std::string& name = "checkpoint") {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 8 || std::memcmp(p, "ADVLAB", 6) != 0)
        throw CheckpointError(CheckpointErrorKind::bad_magic, name + ": not an advlab checkpoint (bad magic)");
    if (std::memcmp(p, kCheckpointMagic.data(), 8) != 0)
        throw CheckpointError(CheckpointErrorKind::version_mismatch,
                              name + ": unsupported checkpoint version '" + std::string(bytes.substr(6, 2)) + "'");
    if (bytes.size() < 16) throw CheckpointError(CheckpointErrorKind::truncated, name + ": truncated header");
    const std::uint64_t len = detail::get_u64(p + 8);
    if (len > bytes.size() - 16) throw CheckpointError(CheckpointErrorKind::truncated, name + ": truncated metadata");
    Json meta;
    try {
        meta = Json::parse(bytes.substr(16, len));
    } catch (const Json::exception& e) {
        throw CheckpointError(CheckpointErrorKind::malformed, name + ": metadata is not valid JSON");
    }
    std::size_t pos = 16 + len;
    auto read_tensors = [&](const Json& shapes) {
        std::vector<Tensor> out;
        for (const auto& s : shapes) {
            Shape shape = s.get<Shape>();
            const std::size_t n = numel(shape);
            if (n > (bytes.size() - pos) / 8)
                throw CheckpointError(CheckpointErrorKind::truncated, name + ": truncated tensor data");
            std::vector<double> data(n);
            for (std::size_t i = 0; i < n; ++i, pos += 8) data[i] = std::bit_cast<double>(detail::get_u64(p + pos));
            out.emplace_back(std::move(shape), std::move(data));
        }
        return out;
    };
    Checkpoint ck;
    try {
        if (meta.at("format_version").get<int>() != kCheckpointVersion)
            throw CheckpointError(CheckpointErrorKind::version_mismatch, name + ": unsupported metadata version");
        const ModelSpec spec = model_spec_from_json(JsonReader(meta.at("model"), "model"));
        Model fresh = init_model(spec);
        auto params = read_tensors(meta.at("params"));
        if (params.size() != fresh.params().size())
            throw CheckpointError(CheckpointErrorKind::malformed, name + ": parameter count does not match the model");
        for (std::size_t k = 0; k < params.size(); ++k)
            if (params[k].shape() != fresh.params()[k].shape())
                throw CheckpointError(CheckpointErrorKind::malformed, name + ": parameter shape mismatch");
        ck.model = Model(spec, fresh.layers(), std::move(params));
        ck.epoch = meta.at("epoch").get<std::size_t>();
        ck.seed = meta.at("seed").get<std::uint64_t>();
        ck.config_digest = meta.at("config_digest").get<std::string>();
        if (meta.contains("optimizer")) {
            const auto& o = meta["optimizer"];
            OptimizerState st;
            st.mu = o.at("mu").get<double>();
            st.weight_decay = o.at("weight_decay").get<double>();
            st.lr = o.at("lr").get<double>();
            st.momentum = read_tensors(o.at("momentum"));
            ck.optimizer = std::move(st);
        }
        if (meta.contains("swa")) {
            const auto& s = meta["swa"];
            SwaState sw;
            sw.count = s.at("count").get<std::size_t>();
            sw.start_epoch = s.at("start_epoch").get<std::size_t>();
            sw.average = read_tensors(s.at("average"));
            ck.swa = std::move(sw);
        }
        if (meta.contains("extra")) ck.extra = meta["extra"];
    } catch (const Json::exception& e) {
        throw CheckpointError(CheckpointErrorKind::malformed, name + ": malformed metadata (" + e.what() + ")");
    } catch (const ConfigError& e) {
        throw CheckpointError(CheckpointErrorKind::malformed, name + ": " + e.what());
    }
    if (pos != bytes.size()) throw CheckpointError(CheckpointErrorKind::malformed, name + ": trailing bytes");
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    write_text(path.string(), checkpoint_bytes(ck));
}

/// Loads and validates a checkpoint. A digest that differs from `expected_digest` (when given)
/// only produces a warning on stderr.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_digest = "") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    Checkpoint ck = parse_checkpoint(buf.str(), path.string());
    if (!expected_digest.empty() && ck.config_digest != expected_digest)
        std::cerr << "warning: checkpoint '" << path.string() << "' was written under a different config (digest "
                  << ck.config_digest << ", expected " << expected_digest << ")\n";
    return ck;
}

}  // namespace advlab
