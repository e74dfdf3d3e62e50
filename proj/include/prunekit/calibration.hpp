#pragma once

#include "common.hpp"
#include "model.hpp"
#include "model_io.hpp"
#include "rng.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace prunekit {

//
// Calibration batches: small token sets on which every importance statistic,
// regression and layer cosine is computed. Fully deterministic from
// (corpus bytes, n_samples, seq_len, seed).
//

constexpr int kDefaultCalibSamples = 32;
constexpr int kDefaultCalibSeqLen = 128;

constexpr uint32_t kTokenBos = 256; // byte-level vocab: 0..255 raw bytes, 256 BOS

struct CalibrationSet {
    std::vector<std::vector<uint32_t>> samples;
    int n_samples = kDefaultCalibSamples;
    int seq_len = kDefaultCalibSeqLen;
    uint64_t seed = 0;
};

inline std::vector<uint32_t> tokenize_bytes(std::span<const uint8_t> text) {
    std::vector<uint32_t> out;
    out.reserve(text.size() + 1);
    out.push_back(kTokenBos);
    for (uint8_t b : text) {
        out.push_back((uint32_t) b);
    }
    return out;
}

inline std::vector<uint8_t> detokenize_bytes(std::span<const uint32_t> tokens) {
    std::vector<uint8_t> out;
    out.reserve(tokens.size());
    for (uint32_t t : tokens) {
        if (t < 256) {
            out.push_back((uint8_t) t);
        }
    }
    return out;
}

// n_samples windows at uniform start offsets, drawn with replacement from
// xoshiro256**(seed); offset_k = next() % (len - seq_len + 1).
inline CalibrationSet sample_calibration(std::span<const uint32_t> corpus_tokens, int n_samples,
                                         int seq_len, uint64_t seed) {
    require(n_samples >= 1, "sample_calibration: n_samples must be >= 1");
    require(seq_len >= 2, "sample_calibration: seq_len must be >= 2");
    require((int) corpus_tokens.size() >= seq_len,
            "sample_calibration: corpus shorter than seq_len (" +
                std::to_string(corpus_tokens.size()) + " < " + std::to_string(seq_len) + ")");

    CalibrationSet cs;
    cs.n_samples = n_samples;
    cs.seq_len = seq_len;
    cs.seed = seed;
    Xoshiro256ss rng(seed);
    const uint64_t max_start = corpus_tokens.size() - (size_t) seq_len;
    for (int k = 0; k < n_samples; k++) {
        const uint64_t start = rng.next_below(max_start + 1);
        cs.samples.emplace_back(corpus_tokens.begin() + (ptrdiff_t) start,
                                corpus_tokens.begin() + (ptrdiff_t) (start + (uint64_t) seq_len));
    }
    return cs;
}

// Corpus loader for the CLI: `.tokens` files hold raw u32 ids, anything else
// is treated as text and byte-tokenized.
inline std::vector<uint32_t> load_corpus(const std::filesystem::path & path) {
    if (path.extension() == ".tokens") {
        return read_tokens_file(path);
    }
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) {
        throw io_error("load_corpus: cannot open " + path.string());
    }
    const std::streamsize bytes = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> raw((size_t) bytes);
    f.read(reinterpret_cast<char *>(raw.data()), bytes);
    if (!f) {
        throw io_error("load_corpus: failed reading " + path.string());
    }
    return tokenize_bytes(raw);
}

// One trace per sample, in sample-index order.
inline std::vector<ActivationTrace> collect_traces(const Model & model, const CalibrationSet & calib,
                                                   const CaptureSpec & spec) {
    std::vector<ActivationTrace> traces;
    traces.reserve(calib.samples.size());
    for (const auto & sample : calib.samples) {
        traces.push_back(forward_with_trace(model, sample, spec).second);
    }
    return traces;
}

namespace detail {

inline void append_rows(Matrix & dst, const Matrix & src) {
    if (src.empty()) {
        return;
    }
    if (dst.empty()) {
        dst = src;
        return;
    }
    require(dst.cols == src.cols, "append_rows: column mismatch");
    dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
    dst.rows += src.rows;
}

} // namespace detail

// Concatenate per-sample traces along the token axis, in sample order.
inline ActivationTrace concat_traces(const std::vector<ActivationTrace> & traces) {
    ActivationTrace merged;
    if (traces.empty()) {
        return merged;
    }
    merged.layers.resize(traces[0].layers.size());
    for (const ActivationTrace & t : traces) {
        require(t.layers.size() == merged.layers.size(), "concat_traces: layer count mismatch");
        for (size_t l = 0; l < t.layers.size(); l++) {
            LayerTrace & m = merged.layers[l];
            const LayerTrace & s = t.layers[l];
            detail::append_rows(m.layer_input, s.layer_input);
            detail::append_rows(m.layer_output, s.layer_output);
            detail::append_rows(m.mha_preproj_input, s.mha_preproj_input);
            detail::append_rows(m.mha_output, s.mha_output);
            detail::append_rows(m.ffn_intermediate, s.ffn_intermediate);
            detail::append_rows(m.ffn_output, s.ffn_output);
            if (!s.head_outputs.empty()) {
                if (m.head_outputs.empty()) {
                    m.head_outputs.resize(s.head_outputs.size());
                }
                require(m.head_outputs.size() == s.head_outputs.size(),
                        "concat_traces: head count mismatch");
                for (size_t h = 0; h < s.head_outputs.size(); h++) {
                    detail::append_rows(m.head_outputs[h], s.head_outputs[h]);
                }
            }
        }
    }
    return merged;
}

} // namespace prunekit
