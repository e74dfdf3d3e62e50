#pragma once

#include "common.hpp"
#include "model.hpp"
#include "rng.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace prunekit {

static_assert(std::endian::native == std::endian::little,
              "weights.bin is little-endian; big-endian hosts are not supported");

//
// On-disk model format: a directory holding
//   config.json   — architecture + per-layer shapes + pruning bookkeeping
//   manifest.json — tensor name/dtype/shape/byte_offset records
//   weights.bin   — little-endian f32, row-major, concatenated per manifest
// Loading validates everything and never silently repairs.
//

struct TensorEntry {
    std::string name;
    std::vector<int> shape;
    uint64_t byte_offset = 0;

    uint64_t elements() const {
        uint64_t n = 1;
        for (int s : shape) {
            n *= (uint64_t) s;
        }
        return n;
    }
};

struct TensorManifest {
    std::vector<TensorEntry> entries;
    uint64_t total_bytes = 0;
};

namespace detail {

struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    const std::vector<double> * data; // length = product(shape)
};

// canonical tensor order; also defines what "required by the config" means
inline std::vector<NamedTensor> tensor_list(const Model & m) {
    std::vector<NamedTensor> out;
    const ModelConfig & cfg = m.config;
    out.push_back({"tok_embedding", {cfg.vocab_size, cfg.d_model}, &m.tok_embedding.data});
    for (int l = 0; l < cfg.n_layers; l++) {
        const LayerWeights & lw = m.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        const int hd = cfg.per_layer_heads[l] * cfg.d_head;
        const int dff = cfg.per_layer_dff[l];
        out.push_back({p + "attn_norm", {cfg.d_model}, &lw.attn_norm});
        out.push_back({p + "w_q", {hd, cfg.d_model}, &lw.w_q.data});
        out.push_back({p + "w_k", {hd, cfg.d_model}, &lw.w_k.data});
        out.push_back({p + "w_v", {hd, cfg.d_model}, &lw.w_v.data});
        out.push_back({p + "w_o", {cfg.d_model, hd}, &lw.w_o.data});
        if (!lw.o_bias.empty()) {
            out.push_back({p + "o_bias", {cfg.d_model}, &lw.o_bias});
        }
        out.push_back({p + "ffn_norm", {cfg.d_model}, &lw.ffn_norm});
        out.push_back({p + "w_gate", {dff, cfg.d_model}, &lw.w_gate.data});
        out.push_back({p + "w_up", {dff, cfg.d_model}, &lw.w_up.data});
        out.push_back({p + "w_down", {cfg.d_model, dff}, &lw.w_down.data});
        if (!lw.down_bias.empty()) {
            out.push_back({p + "down_bias", {cfg.d_model}, &lw.down_bias});
        }
    }
    out.push_back({"final_norm", {cfg.d_model}, &m.final_norm});
    out.push_back({"lm_head", {cfg.vocab_size, cfg.d_model}, &m.lm_head.data});
    return out;
}

} // namespace detail

inline void save_model(const Model & model, const std::filesystem::path & dir) {
    namespace fs = std::filesystem;
    model.config.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw io_error("save_model: cannot create directory " + dir.string() + ": " + ec.message());
    }

    const ModelConfig & cfg = model.config;
    nlohmann::ordered_json config_json;
    config_json["n_layers"] = cfg.n_layers;
    config_json["d_model"] = cfg.d_model;
    config_json["n_heads"] = cfg.n_heads;
    config_json["d_head"] = cfg.d_head;
    config_json["d_ff"] = cfg.d_ff;
    config_json["vocab_size"] = cfg.vocab_size;
    config_json["rope_base"] = cfg.rope_base;
    config_json["norm_eps"] = cfg.norm_eps;
    config_json["per_layer_heads"] = cfg.per_layer_heads;
    config_json["per_layer_dff"] = cfg.per_layer_dff;
    // per layer: [has o_bias, has down_bias]
    nlohmann::ordered_json biases = nlohmann::ordered_json::array();
    for (const LayerWeights & lw : model.layers) {
        biases.push_back({!lw.o_bias.empty(), !lw.down_bias.empty()});
    }
    config_json["has_output_biases"] = biases;
    config_json["kept_head_indices"] = model.kept_head_indices;
    config_json["kept_channel_indices"] = model.kept_channel_indices;

    const auto tensors = detail::tensor_list(model);
    nlohmann::ordered_json manifest_json;
    manifest_json["entries"] = nlohmann::ordered_json::array();
    uint64_t offset = 0;
    for (const auto & t : tensors) {
        manifest_json["entries"].push_back({{"name", t.name},
                                            {"dtype", "f32"},
                                            {"shape", t.shape},
                                            {"byte_offset", offset}});
        offset += t.elements() * 4;
    }
    manifest_json["total_bytes"] = offset;

    auto write_text = [&](const char * fname, const std::string & text) {
        const fs::path p = dir / fname;
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f || !(f << text) || !(f << "\n")) {
            throw io_error("save_model: failed writing " + p.string());
        }
    };
    write_text("config.json", config_json.dump(2));
    write_text("manifest.json", manifest_json.dump(2));

    const fs::path wpath = dir / "weights.bin";
    std::ofstream wf(wpath, std::ios::binary | std::ios::trunc);
    if (!wf) {
        throw io_error("save_model: cannot open " + wpath.string());
    }
    std::vector<float> buf;
    for (const auto & t : tensors) {
        buf.resize(t.data->size());
        for (size_t i = 0; i < buf.size(); i++) {
            buf[i] = (float) (*t.data)[i];
        }
        wf.write(reinterpret_cast<const char *>(buf.data()), (std::streamsize) (buf.size() * 4));
    }
    if (!wf) {
        throw io_error("save_model: failed writing " + wpath.string());
    }
}

inline Model load_model(const std::filesystem::path & dir) {
    namespace fs = std::filesystem;
    auto read_json = [&](const char * fname) {
        const fs::path p = dir / fname;
        std::ifstream f(p, std::ios::binary);
        if (!f) {
            throw io_error("load_model: cannot open " + p.string());
        }
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception & e) {
            throw io_error("load_model: malformed " + p.string() + ": " + e.what());
        }
        return j;
    };

    const nlohmann::json cj = read_json("config.json");
    Model model;
    ModelConfig & cfg = model.config;
    try {
        cfg.n_layers = cj.at("n_layers").get<int>();
        cfg.d_model = cj.at("d_model").get<int>();
        cfg.n_heads = cj.at("n_heads").get<int>();
        cfg.d_head = cj.at("d_head").get<int>();
        cfg.d_ff = cj.at("d_ff").get<int>();
        cfg.vocab_size = cj.at("vocab_size").get<int>();
        cfg.rope_base = cj.at("rope_base").get<double>();
        cfg.norm_eps = cj.at("norm_eps").get<double>();
        cfg.per_layer_heads = cj.at("per_layer_heads").get<std::vector<int>>();
        cfg.per_layer_dff = cj.at("per_layer_dff").get<std::vector<int>>();
        model.kept_head_indices = cj.at("kept_head_indices").get<std::vector<std::vector<int>>>();
        model.kept_channel_indices =
            cj.at("kept_channel_indices").get<std::vector<std::vector<int>>>();
    } catch (const nlohmann::json::exception & e) {
        throw io_error("load_model: config.json missing or mistyped key: " + std::string(e.what()));
    }
    cfg.validate();

    const nlohmann::json bias_spec = cj.at("has_output_biases");
    require((int) bias_spec.size() == cfg.n_layers,
            "load_model: has_output_biases must list every layer");
    require((int) model.kept_head_indices.size() == cfg.n_layers &&
                (int) model.kept_channel_indices.size() == cfg.n_layers,
            "load_model: kept index lists must cover every layer");
    for (int l = 0; l < cfg.n_layers; l++) {
        require((int) model.kept_head_indices[l].size() == cfg.per_layer_heads[l],
                "load_model: kept_head_indices inconsistent with per_layer_heads at layer " +
                    std::to_string(l));
        require((int) model.kept_channel_indices[l].size() == cfg.per_layer_dff[l],
                "load_model: kept_channel_indices inconsistent with per_layer_dff at layer " +
                    std::to_string(l));
    }

    // allocate per config, install bias vectors the config promises
    model.layers.resize((size_t) cfg.n_layers);
    for (int l = 0; l < cfg.n_layers; l++) {
        LayerWeights & lw = model.layers[l];
        const int hd = cfg.per_layer_heads[l] * cfg.d_head;
        const int dff = cfg.per_layer_dff[l];
        lw.w_q = Matrix(hd, cfg.d_model);
        lw.w_k = Matrix(hd, cfg.d_model);
        lw.w_v = Matrix(hd, cfg.d_model);
        lw.w_o = Matrix(cfg.d_model, hd);
        lw.w_gate = Matrix(dff, cfg.d_model);
        lw.w_up = Matrix(dff, cfg.d_model);
        lw.w_down = Matrix(cfg.d_model, dff);
        lw.attn_norm.resize((size_t) cfg.d_model);
        lw.ffn_norm.resize((size_t) cfg.d_model);
        if (bias_spec[l].at(0).get<bool>()) {
            lw.o_bias.resize((size_t) cfg.d_model);
        }
        if (bias_spec[l].at(1).get<bool>()) {
            lw.down_bias.resize((size_t) cfg.d_model);
        }
    }
    model.tok_embedding = Matrix(cfg.vocab_size, cfg.d_model);
    model.final_norm.resize((size_t) cfg.d_model);
    model.lm_head = Matrix(cfg.vocab_size, cfg.d_model);

    auto required = detail::tensor_list(model);

    const nlohmann::json mj = read_json("manifest.json");
    TensorManifest manifest;
    try {
        for (const auto & e : mj.at("entries")) {
            TensorEntry te;
            te.name = e.at("name").get<std::string>();
            require(e.at("dtype").get<std::string>() == "f32",
                    "load_model: tensor " + te.name + ": unsupported dtype");
            te.shape = e.at("shape").get<std::vector<int>>();
            te.byte_offset = e.at("byte_offset").get<uint64_t>();
            manifest.entries.push_back(std::move(te));
        }
        manifest.total_bytes = mj.at("total_bytes").get<uint64_t>();
    } catch (const nlohmann::json::exception & e) {
        throw io_error("load_model: manifest.json missing or mistyped key: " +
                       std::string(e.what()));
    }

    require(manifest.entries.size() == required.size(),
            "load_model: manifest lists " + std::to_string(manifest.entries.size()) +
                " tensors, config requires " + std::to_string(required.size()));
    uint64_t offset = 0;
    for (size_t i = 0; i < required.size(); i++) {
        const TensorEntry & te = manifest.entries[i];
        const auto & req = required[i];
        require(te.name == req.name, "load_model: tensor " + req.name +
                                         " missing or out of order (manifest has " + te.name + ")");
        require(te.shape == req.shape, "load_model: tensor " + te.name + ": shape mismatch with config");
        require(te.byte_offset == offset,
                "load_model: tensor " + te.name + ": byte_offset not contiguous");
        offset += te.elements() * 4;
    }
    require(manifest.total_bytes == offset, "load_model: manifest total_bytes inconsistent");

    const fs::path wpath = dir / "weights.bin";
    std::ifstream wf(wpath, std::ios::binary | std::ios::ate);
    if (!wf) {
        throw io_error("load_model: cannot open " + wpath.string());
    }
    const uint64_t fsize = (uint64_t) wf.tellg();
    require(fsize == manifest.total_bytes,
            "load_model: weights.bin holds " + std::to_string(fsize) + " bytes, manifest expects " +
                std::to_string(manifest.total_bytes));
    wf.seekg(0);

    std::vector<float> buf;
    for (auto & req : required) {
        uint64_t count = 1;
        for (int s : req.shape) {
            count *= (uint64_t) s;
        }
        buf.resize((size_t) count);
        wf.read(reinterpret_cast<char *>(buf.data()), (std::streamsize) (count * 4));
        if (!wf) {
            throw io_error("load_model: short read in " + wpath.string() + " at tensor " + req.name);
        }
        auto * dst = const_cast<std::vector<double> *>(req.data);
        for (size_t i = 0; i < buf.size(); i++) {
            if (!std::isfinite(buf[i])) {
                throw invalid_input("load_model: tensor " + req.name + " contains non-finite values");
            }
            (*dst)[i] = (double) buf[i];
        }
    }
    return model;
}

//
// Seeded toy models. Projection / embedding weights are N(0, (0.02/sqrt(d_model))^2)
// draws from xoshiro256**, quantized to f32 at generation so that a saved copy
// reloads bit-exactly. Norm gains are 1.0 and consume no randomness. Draw order:
// tok_embedding, then per layer w_q, w_k, w_v, w_o, w_gate, w_up, w_down, then lm_head.
//

inline Model gen_toy_model(const ModelConfig & config, uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    Xoshiro256ss rng(seed);
    const double sigma = 0.02 / std::sqrt((double) config.d_model);

    auto fill = [&](Matrix & w, int rows, int cols) {
        w = Matrix(rows, cols);
        for (double & v : w.data) {
            v = (double) (float) (sigma * rng.next_gaussian());
        }
    };

    fill(m.tok_embedding, config.vocab_size, config.d_model);
    m.layers.resize((size_t) config.n_layers);
    for (int l = 0; l < config.n_layers; l++) {
        LayerWeights & lw = m.layers[l];
        const int hd = config.per_layer_heads[l] * config.d_head;
        const int dff = config.per_layer_dff[l];
        fill(lw.w_q, hd, config.d_model);
        fill(lw.w_k, hd, config.d_model);
        fill(lw.w_v, hd, config.d_model);
        fill(lw.w_o, config.d_model, hd);
        fill(lw.w_gate, dff, config.d_model);
        fill(lw.w_up, dff, config.d_model);
        fill(lw.w_down, config.d_model, dff);
        lw.attn_norm.assign((size_t) config.d_model, 1.0);
        lw.ffn_norm.assign((size_t) config.d_model, 1.0);
    }
    m.final_norm.assign((size_t) config.d_model, 1.0);
    fill(m.lm_head, config.vocab_size, config.d_model);

    m.kept_head_indices.resize((size_t) config.n_layers);
    m.kept_channel_indices.resize((size_t) config.n_layers);
    for (int l = 0; l < config.n_layers; l++) {
        for (int i = 0; i < config.per_layer_heads[l]; i++) {
            m.kept_head_indices[l].push_back(i);
        }
        for (int i = 0; i < config.per_layer_dff[l]; i++) {
            m.kept_channel_indices[l].push_back(i);
        }
    }
    return m;
}

//
// Token streams: one unsigned 32-bit little-endian id per 4 bytes, no header.
//

inline void write_tokens_file(const std::filesystem::path & path,
                              std::span<const uint32_t> tokens) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw io_error("write_tokens_file: cannot open " + path.string());
    }
    f.write(reinterpret_cast<const char *>(tokens.data()), (std::streamsize) (tokens.size() * 4));
    if (!f) {
        throw io_error("write_tokens_file: failed writing " + path.string());
    }
}

inline std::vector<uint32_t> read_tokens_file(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) {
        throw io_error("read_tokens_file: cannot open " + path.string());
    }
    const uint64_t bytes = (uint64_t) f.tellg();
    require(bytes % 4 == 0, "read_tokens_file: size of " + path.string() + " not a multiple of 4");
    f.seekg(0);
    std::vector<uint32_t> tokens((size_t) (bytes / 4));
    f.read(reinterpret_cast<char *>(tokens.data()), (std::streamsize) bytes);
    if (!f) {
        throw io_error("read_tokens_file: failed reading " + path.string());
    }
    return tokens;
}

} // namespace prunekit
