#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adamw.hpp"
#include "encoder.hpp"
#include "text_format.hpp"

namespace dualenc {

inline constexpr char checkpoint_magic[8] = {'L', 'C', 'L', 'D', 'E', 'N', 'C', '1'};
inline constexpr std::uint32_t checkpoint_version = 1;

// Model weights plus everything needed to resume or audit a run: how the
// positional table was produced, the step counter, and optimizer moments
// (empty when the checkpoint predates any optimizer step or was stretched).
template <typename T>
struct Checkpoint {
    DualEncoder<T> model;
    std::string pe_mode = "none";  // none | linear | kps
    std::uint64_t step = 0;
    AdamState<T> opt;

    bool has_optimizer() const { return !opt.empty(); }
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// Field order is fixed so the serialized form, and therefore the config
// hash and the file bytes, are stable.
inline std::string serialize_model_config(const ModelConfig& cfg) {
    std::string s = "{";
    s += "\"vocab_size\":" + std::to_string(cfg.vocab_size);
    s += ",\"context_len\":" + std::to_string(cfg.context_len);
    s += ",\"d_model\":" + std::to_string(cfg.d_model);
    s += ",\"n_layers\":" + std::to_string(cfg.n_layers);
    s += ",\"n_heads\":" + std::to_string(cfg.n_heads);
    s += ",\"d_embed\":" + std::to_string(cfg.d_embed);
    s += ",\"image_grid\":" + std::to_string(cfg.image_grid);
    s += ",\"image_channels\":" + std::to_string(cfg.image_channels);
    s += ",\"init_seed\":" + std::to_string(cfg.init_seed);
    s += ",\"temperature_init\":" + format_g17(cfg.temperature_init);
    s += "}";
    return s;
}

inline ModelConfig parse_model_config(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.context_len = j.at("context_len").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.d_embed = j.at("d_embed").get<std::size_t>();
    cfg.image_grid = j.at("image_grid").get<std::size_t>();
    cfg.image_channels = j.at("image_channels").get<std::size_t>();
    cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
    cfg.temperature_init = j.at("temperature_init").get<double>();
    return cfg;
}

struct TensorEntry {
    std::string name;
    std::size_t rows = 0, cols = 0;
    std::uint64_t offset = 0;
};

inline void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
void append_f32_payload(std::string& out, const Matrix<T>& m) {
    const T* d = m.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
        const float f = static_cast<float>(d[i]);
        char buf[4];
        std::memcpy(buf, &f, 4);
        out.append(buf, 4);
    }
}

// Directory order: model tensors in registration order, then first moments,
// then second moments. Offsets are relative to the start of the payload.
template <typename T>
std::vector<std::pair<std::string, const Matrix<T>*>> directory_tensors(const Checkpoint<T>& ckpt) {
    std::vector<std::pair<std::string, const Matrix<T>*>> dir;
    std::vector<std::string> param_names;
    ckpt.model.for_each_param([&](const std::string& name, const Matrix<T>& p) {
        dir.emplace_back(name, &p);
        param_names.push_back(name);
    });
    if (ckpt.has_optimizer()) {
        require(ckpt.opt.m.size() == param_names.size() && ckpt.opt.v.size() == param_names.size(),
                "checkpoint: optimizer moment count does not match parameter count");
        for (std::size_t i = 0; i < param_names.size(); ++i)
            dir.emplace_back("opt.m." + param_names[i], &ckpt.opt.m[i]);
        for (std::size_t i = 0; i < param_names.size(); ++i)
            dir.emplace_back("opt.v." + param_names[i], &ckpt.opt.v[i]);
    }
    return dir;
}

inline std::string printable_bytes(const char* p, std::size_t n) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char c = static_cast<unsigned char>(p[i]);
        if (c >= 0x20 && c < 0x7f) {
            out.push_back(static_cast<char>(c));
        } else {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\x%02x", c);
            out += buf;
        }
    }
    return out;
}

}  // namespace detail

// Serializes to the documented binary layout: magic, u32 version, u32
// little-endian JSON header length, header, then raw 32-bit float payloads
// in directory order. The same checkpoint always produces the same bytes.
template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt) {
    ckpt.model.config.validate();
    require(ckpt.pe_mode == "none" || ckpt.pe_mode == "linear" || ckpt.pe_mode == "kps",
            "checkpoint: pe_mode must be none, linear, or kps");
    const auto dir = detail::directory_tensors(ckpt);

    std::string header = "{";
    header += "\"config\":" + detail::serialize_model_config(ckpt.model.config);
    header += ",\"pe_mode\":\"" + ckpt.pe_mode + "\"";
    header += std::string(",\"pe_trainable\":") + (ckpt.model.text_pos.trainable ? "true" : "false");
    header += ",\"step\":" + std::to_string(ckpt.step);
    header += ",\"config_hash\":\"" +
              detail::hex64(detail::fnv1a64(detail::serialize_model_config(ckpt.model.config))) + "\"";
    header += ",\"tensors\":[";
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < dir.size(); ++i) {
        if (i) header += ",";
        header += "{\"name\":\"" + json_escape(dir[i].first) + "\"";
        header += ",\"rows\":" + std::to_string(dir[i].second->rows());
        header += ",\"cols\":" + std::to_string(dir[i].second->cols());
        header += ",\"offset\":" + std::to_string(offset) + "}";
        offset += static_cast<std::uint64_t>(dir[i].second->size()) * 4;
    }
    header += "]}";

    std::string out;
    out.reserve(16 + header.size() + offset);
    out.append(checkpoint_magic, 8);
    detail::append_u32(out, checkpoint_version);
    detail::append_u32(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    for (const auto& e : dir) detail::append_f32_payload(out, *e.second);
    return out;
}

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "checkpoint: cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(f.good(), "checkpoint: write failed: " + path);
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes) {
    require(bytes.size() >= 16, "checkpoint: file too small to hold a header");
    require(std::memcmp(bytes.data(), checkpoint_magic, 8) == 0,
            "checkpoint magic mismatch: expected LCLDENC1, found " +
                detail::printable_bytes(bytes.data(), 8));
    std::uint32_t version = 0, header_len = 0;
    std::memcpy(&version, bytes.data() + 8, 4);
    std::memcpy(&header_len, bytes.data() + 12, 4);
    require(version == checkpoint_version,
            "checkpoint version mismatch: expected " + std::to_string(checkpoint_version) +
                ", found " + std::to_string(version));
    require(bytes.size() >= 16 + static_cast<std::size_t>(header_len),
            "checkpoint: truncated header");

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw contract_error(std::string("checkpoint: malformed header: ") + e.what());
    }

    Checkpoint<T> ckpt;
    ModelConfig cfg;
    std::vector<detail::TensorEntry> entries;
    try {
        cfg = detail::parse_model_config(j.at("config"));
        ckpt.pe_mode = j.at("pe_mode").get<std::string>();
        ckpt.step = j.at("step").get<std::uint64_t>();
        const std::string stored_hash = j.at("config_hash").get<std::string>();
        const std::string computed_hash =
            detail::hex64(detail::fnv1a64(detail::serialize_model_config(cfg)));
        require(stored_hash == computed_hash, "checkpoint config hash mismatch: expected " +
                                                  computed_hash + ", found " + stored_hash);
        for (const auto& t : j.at("tensors")) {
            detail::TensorEntry e;
            e.name = t.at("name").get<std::string>();
            e.rows = t.at("rows").get<std::size_t>();
            e.cols = t.at("cols").get<std::size_t>();
            e.offset = t.at("offset").get<std::uint64_t>();
            entries.push_back(std::move(e));
        }
        ckpt.model = allocate_model<T>(cfg);
        ckpt.model.text_pos.trainable = j.at("pe_trainable").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw contract_error(std::string("checkpoint: malformed header: ") + e.what());
    }

    const std::size_t payload_start = 16 + header_len;
    auto read_into = [&](Matrix<T>& dst, const detail::TensorEntry& e) {
        require(dst.rows() == e.rows && dst.cols() == e.cols,
                "checkpoint: tensor " + e.name + " has shape " + std::to_string(e.rows) + "x" +
                    std::to_string(e.cols) + ", expected " + std::to_string(dst.rows()) + "x" +
                    std::to_string(dst.cols()));
        const std::size_t need = payload_start + e.offset + dst.size() * 4;
        require(bytes.size() >= need, "checkpoint: truncated payload for tensor " + e.name);
        const char* src = bytes.data() + payload_start + e.offset;
        T* d = dst.data();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            float f;
            std::memcpy(&f, src + i * 4, 4);
            d[i] = static_cast<T>(f);
        }
    };

    std::vector<std::pair<std::string, Matrix<T>*>> params;
    ckpt.model.for_each_param(
        [&](const std::string& name, Matrix<T>& p) { params.emplace_back(name, &p); });

    std::size_t cursor = 0;
    auto take_entry = [&](const std::string& name) -> const detail::TensorEntry& {
        require(cursor < entries.size(), "checkpoint: missing tensor " + name);
        require(entries[cursor].name == name, "checkpoint: tensor order mismatch: expected " +
                                                  name + ", found " + entries[cursor].name);
        return entries[cursor++];
    };

    for (auto& [name, mat] : params) read_into(*mat, take_entry(name));
    if (cursor < entries.size()) {
        ckpt.opt.m.resize(params.size());
        ckpt.opt.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            ckpt.opt.m[i] = Matrix<T>(params[i].second->rows(), params[i].second->cols());
            read_into(ckpt.opt.m[i], take_entry("opt.m." + params[i].first));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            ckpt.opt.v[i] = Matrix<T>(params[i].second->rows(), params[i].second->cols());
            read_into(ckpt.opt.v[i], take_entry("opt.v." + params[i].first));
        }
        ckpt.opt.steps = ckpt.step;
    }
    require(cursor == entries.size(), "checkpoint: unexpected extra tensor " +
                                          (cursor < entries.size() ? entries[cursor].name : ""));
    return ckpt;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "checkpoint: cannot open for reading: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint<T>(bytes);
}

}  // namespace dualenc
