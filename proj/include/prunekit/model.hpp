#pragma once

#include "common.hpp"
#include "linalg.hpp"

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

namespace prunekit {

//
// Minimal LLaMA-style decoder: RMSNorm pre-norm blocks, rotary position
// embedding, SwiGLU FFN, untied embedding / lm_head, no KV cache. Layers may
// carry heterogeneous head counts and FFN widths after pruning. Output
// projections start bias-free; recovery folds per-dimension biases in.
//

struct ModelConfig {
    int n_layers = 0;
    int d_model = 0;
    int n_heads = 0;
    int d_head = 0;
    int d_ff = 0;
    int vocab_size = 0;
    double rope_base = 10000.0;
    double norm_eps = 1e-5;
    std::vector<int> per_layer_heads; // current head count per layer
    std::vector<int> per_layer_dff;   // current FFN width per layer

    void validate() const {
        require(n_layers >= 1 && d_model >= 1 && n_heads >= 1 && d_head >= 1 && d_ff >= 1 &&
                    vocab_size >= 1,
                "config: all dimensions must be positive");
        require(n_heads * d_head == d_model, "config: n_heads * d_head must equal d_model");
        require(d_head % 2 == 0, "config: d_head must be even (rotary pairs)");
        require((int) per_layer_heads.size() == n_layers && (int) per_layer_dff.size() == n_layers,
                "config: per-layer shape vectors must have n_layers entries");
        for (int l = 0; l < n_layers; l++) {
            require(per_layer_heads[l] >= 1 && per_layer_heads[l] <= n_heads,
                    "config: per_layer_heads out of range");
            require(per_layer_dff[l] >= 1 && per_layer_dff[l] <= d_ff,
                    "config: per_layer_dff out of range");
        }
    }
};

struct LayerWeights {
    Matrix w_q, w_k, w_v;            // (heads_l * d_head) x d_model
    Matrix w_o;                      // d_model x (heads_l * d_head)
    std::vector<double> o_bias;      // d_model, empty when absent
    Matrix w_gate, w_up;             // d_ff_l x d_model
    Matrix w_down;                   // d_model x d_ff_l
    std::vector<double> down_bias;   // d_model, empty when absent
    std::vector<double> attn_norm;   // d_model
    std::vector<double> ffn_norm;    // d_model
};

struct Model {
    ModelConfig config;
    Matrix tok_embedding; // vocab x d_model
    std::vector<LayerWeights> layers;
    std::vector<double> final_norm; // d_model
    Matrix lm_head; // vocab x d_model

    // surviving structure indices relative to the original dense model,
    // persisted for post-hoc inspection of pruning decisions
    std::vector<std::vector<int>> kept_head_indices;
    std::vector<std::vector<int>> kept_channel_indices;
};

//
// Activation tracing. Capture is opt-in per layer because per-head tensors
// cost heads * N * d_model memory.
//

struct CaptureSpec {
    bool layer_io = false;            // layer_input/layer_output for every layer
    std::set<int> sublayer_layers;    // mha/ffn tensors (and layer_input) for these layers
    std::set<int> per_head_layers;    // head_outputs for these layers
    int stop_after_layer = -1;        // >= 0: stop after that layer; logits come back empty
};

struct LayerTrace {
    Matrix layer_input;               // N x d_model, residual stream entering the layer
    Matrix layer_output;              // N x d_model, residual stream leaving the layer
    std::vector<Matrix> head_outputs; // per head: N x d_model, X_i W_O^i
    Matrix mha_preproj_input;         // N x (heads_l * d_head), input to w_o
    Matrix mha_output;                // N x d_model, after w_o (+ o_bias)
    Matrix ffn_intermediate;          // N x d_ff_l, SwiGLU activation feeding w_down
    Matrix ffn_output;                // N x d_model, after w_down (+ down_bias)
};

struct ActivationTrace {
    std::vector<LayerTrace> layers;
};

inline Matrix rmsnorm_rows(const Matrix & x, const std::vector<double> & gain, double eps) {
    Matrix out(x.rows, x.cols);
    for (int i = 0; i < x.rows; i++) {
        const double * row = x.row_ptr(i);
        double ms = 0.0;
        for (int j = 0; j < x.cols; j++) {
            ms += row[j] * row[j];
        }
        ms = 1.0 / std::sqrt(ms / x.cols + eps);
        double * orow = out.row_ptr(i);
        for (int j = 0; j < x.cols; j++) {
            orow[j] = row[j] * ms * gain[j];
        }
    }
    return out;
}

// Rotary embedding over adjacent pairs: (x[2j], x[2j+1]) rotated by
// pos * base^(-2j/d_head). Applied in place, one row per position.
inline void apply_rope(Matrix & x, double base) {
    const int d = x.cols;
    for (int t = 0; t < x.rows; t++) {
        double * row = x.row_ptr(t);
        for (int j = 0; j < d / 2; j++) {
            const double freq = std::pow(base, -2.0 * j / d);
            const double angle = t * freq;
            const double c = std::cos(angle);
            const double s = std::sin(angle);
            const double x0 = row[2 * j];
            const double x1 = row[2 * j + 1];
            row[2 * j] = x0 * c - x1 * s;
            row[2 * j + 1] = x0 * s + x1 * c;
        }
    }
}

namespace detail {

// causal softmax(q k^T / sqrt(d)) v for one head, row-max subtracted
inline Matrix causal_attention(const Matrix & q, const Matrix & k, const Matrix & v) {
    const int n = q.rows;
    const int d = q.cols;
    const double scale = 1.0 / std::sqrt((double) d);
    Matrix out(n, v.cols);
    std::vector<double> scores;
    for (int t = 0; t < n; t++) {
        scores.assign((size_t) t + 1, 0.0);
        double m = -1e300;
        for (int s = 0; s <= t; s++) {
            double dot = 0.0;
            const double * qr = q.row_ptr(t);
            const double * kr = k.row_ptr(s);
            for (int c = 0; c < d; c++) {
                dot += qr[c] * kr[c];
            }
            scores[s] = dot * scale;
            m = std::max(m, scores[s]);
        }
        double denom = 0.0;
        for (int s = 0; s <= t; s++) {
            scores[s] = std::exp(scores[s] - m);
            denom += scores[s];
        }
        double * orow = out.row_ptr(t);
        for (int s = 0; s <= t; s++) {
            const double p = scores[s] / denom;
            const double * vr = v.row_ptr(s);
            for (int c = 0; c < v.cols; c++) {
                orow[c] += p * vr[c];
            }
        }
    }
    return out;
}

inline Matrix head_rows(const Matrix & w, int head, int d_head) {
    Matrix out(d_head, w.cols);
    for (int r = 0; r < d_head; r++) {
        for (int c = 0; c < w.cols; c++) {
            out(r, c) = w(head * d_head + r, c);
        }
    }
    return out;
}

inline Matrix head_cols(const Matrix & w, int head, int d_head) {
    Matrix out(w.rows, d_head);
    for (int r = 0; r < w.rows; r++) {
        for (int c = 0; c < d_head; c++) {
            out(r, c) = w(r, head * d_head + c);
        }
    }
    return out;
}

} // namespace detail

inline std::pair<Matrix, ActivationTrace> forward_with_trace(const Model & model,
                                                             std::span<const uint32_t> tokens,
                                                             const CaptureSpec & spec) {
    const ModelConfig & cfg = model.config;
    const int n = (int) tokens.size();
    require(n >= 1, "forward: empty token sequence");
    for (uint32_t t : tokens) {
        require((int) t < cfg.vocab_size, "forward: token id " + std::to_string(t) +
                                              " out of range (vocab " +
                                              std::to_string(cfg.vocab_size) + ")");
    }

    ActivationTrace trace;
    trace.layers.resize((size_t) cfg.n_layers);

    Matrix x(n, cfg.d_model);
    for (int t = 0; t < n; t++) {
        const double * emb = model.tok_embedding.row_ptr((int) tokens[t]);
        std::copy(emb, emb + cfg.d_model, x.row_ptr(t));
    }

    const int last_layer = spec.stop_after_layer >= 0
                               ? std::min(spec.stop_after_layer, cfg.n_layers - 1)
                               : cfg.n_layers - 1;

    for (int l = 0; l <= last_layer; l++) {
        const LayerWeights & lw = model.layers[l];
        const int heads = cfg.per_layer_heads[l];
        const bool want_sub = spec.sublayer_layers.count(l) > 0;
        const bool want_heads = spec.per_head_layers.count(l) > 0;
        LayerTrace & lt = trace.layers[l];

        if (spec.layer_io || want_sub) {
            lt.layer_input = x;
        }

        const Matrix h = rmsnorm_rows(x, lw.attn_norm, cfg.norm_eps);

        // attention, one head at a time: mha output accumulates per-head
        // contributions (head_i attention output through its w_o column block)
        Matrix mha(n, cfg.d_model);
        if (want_sub) {
            lt.mha_preproj_input = Matrix(n, heads * cfg.d_head);
        }
        for (int i = 0; i < heads; i++) {
            Matrix q = matmul_nt(h, detail::head_rows(lw.w_q, i, cfg.d_head));
            Matrix k = matmul_nt(h, detail::head_rows(lw.w_k, i, cfg.d_head));
            Matrix v = matmul_nt(h, detail::head_rows(lw.w_v, i, cfg.d_head));
            apply_rope(q, cfg.rope_base);
            apply_rope(k, cfg.rope_base);
            Matrix att = detail::causal_attention(q, k, v);
            if (want_sub) {
                for (int t = 0; t < n; t++) {
                    for (int c = 0; c < cfg.d_head; c++) {
                        lt.mha_preproj_input(t, i * cfg.d_head + c) = att(t, c);
                    }
                }
            }
            Matrix contrib = matmul_nt(att, detail::head_cols(lw.w_o, i, cfg.d_head));
            add_inplace(mha, contrib);
            if (want_heads) {
                lt.head_outputs.push_back(std::move(contrib));
            }
        }
        if (!lw.o_bias.empty()) {
            for (int t = 0; t < n; t++) {
                double * row = mha.row_ptr(t);
                for (int j = 0; j < cfg.d_model; j++) {
                    row[j] += lw.o_bias[j];
                }
            }
        }
        if (want_sub) {
            lt.mha_output = mha;
        }
        add_inplace(x, mha);

        const Matrix h2 = rmsnorm_rows(x, lw.ffn_norm, cfg.norm_eps);
        const Matrix gate = matmul_nt(h2, lw.w_gate);
        const Matrix up = matmul_nt(h2, lw.w_up);
        Matrix inter(n, cfg.per_layer_dff[l]);
        for (size_t i = 0; i < inter.data.size(); i++) {
            const double g = gate.data[i];
            inter.data[i] = g * sigmoid(g) * up.data[i]; // SwiGLU
        }
        Matrix ffn = matmul_nt(inter, lw.w_down);
        if (!lw.down_bias.empty()) {
            for (int t = 0; t < n; t++) {
                double * row = ffn.row_ptr(t);
                for (int j = 0; j < cfg.d_model; j++) {
                    row[j] += lw.down_bias[j];
                }
            }
        }
        if (want_sub) {
            lt.ffn_intermediate = std::move(inter);
            lt.ffn_output = ffn;
        }
        add_inplace(x, ffn);

        if (spec.layer_io || want_sub) {
            lt.layer_output = x;
        }
    }

    if (spec.stop_after_layer >= 0) {
        return {Matrix(), std::move(trace)};
    }

    const Matrix hfinal = rmsnorm_rows(x, model.final_norm, cfg.norm_eps);
    Matrix logits = matmul_nt(hfinal, model.lm_head);
    return {std::move(logits), std::move(trace)};
}

inline Matrix forward(const Model & model, std::span<const uint32_t> tokens) {
    return forward_with_trace(model, tokens, CaptureSpec{}).first;
}

//
// Structured surgery. Keep sets are strictly increasing index lists into the
// layer's current heads/channels.
//

inline void check_keep_set(const std::vector<int> & keep, int limit, const char * what) {
    require(!keep.empty(), std::string("prune: empty keep set for ") + what);
    for (size_t i = 0; i < keep.size(); i++) {
        require(keep[i] >= 0 && keep[i] < limit,
                std::string("prune: keep index out of range for ") + what);
        if (i > 0) {
            require(keep[i] > keep[i - 1],
                    std::string("prune: keep set must be strictly increasing for ") + what);
        }
    }
}

inline LayerWeights prune_layer_heads(const LayerWeights & lw, int d_head,
                                      const std::vector<int> & keep) {
    const int heads = lw.w_q.rows / d_head;
    check_keep_set(keep, heads, "heads");
    const int kept = (int) keep.size();

    LayerWeights out = lw;
    out.w_q = Matrix(kept * d_head, lw.w_q.cols);
    out.w_k = Matrix(kept * d_head, lw.w_k.cols);
    out.w_v = Matrix(kept * d_head, lw.w_v.cols);
    out.w_o = Matrix(lw.w_o.rows, kept * d_head);
    for (int ki = 0; ki < kept; ki++) {
        const int src = keep[ki];
        for (int r = 0; r < d_head; r++) {
            for (int c = 0; c < lw.w_q.cols; c++) {
                out.w_q(ki * d_head + r, c) = lw.w_q(src * d_head + r, c);
                out.w_k(ki * d_head + r, c) = lw.w_k(src * d_head + r, c);
                out.w_v(ki * d_head + r, c) = lw.w_v(src * d_head + r, c);
            }
        }
        for (int r = 0; r < lw.w_o.rows; r++) {
            for (int c = 0; c < d_head; c++) {
                out.w_o(r, ki * d_head + c) = lw.w_o(r, src * d_head + c);
            }
        }
    }
    return out;
}

inline LayerWeights prune_layer_channels(const LayerWeights & lw, const std::vector<int> & keep) {
    const int dff = lw.w_gate.rows;
    check_keep_set(keep, dff, "channels");
    const int kept = (int) keep.size();

    LayerWeights out = lw;
    out.w_gate = Matrix(kept, lw.w_gate.cols);
    out.w_up = Matrix(kept, lw.w_up.cols);
    out.w_down = Matrix(lw.w_down.rows, kept);
    for (int ki = 0; ki < kept; ki++) {
        const int src = keep[ki];
        for (int c = 0; c < lw.w_gate.cols; c++) {
            out.w_gate(ki, c) = lw.w_gate(src, c);
            out.w_up(ki, c) = lw.w_up(src, c);
        }
        for (int r = 0; r < lw.w_down.rows; r++) {
            out.w_down(r, ki) = lw.w_down(r, src);
        }
    }
    return out;
}

// Model-level surgery: updates weights, per-layer shape bookkeeping and the
// original-index keep tracking in one step.
inline void prune_heads_in_place(Model & model, int layer, const std::vector<int> & keep) {
    model.layers[layer] = prune_layer_heads(model.layers[layer], model.config.d_head, keep);
    std::vector<int> composed(keep.size());
    for (size_t i = 0; i < keep.size(); i++) {
        composed[i] = model.kept_head_indices[layer][keep[i]];
    }
    model.kept_head_indices[layer] = composed;
    model.config.per_layer_heads[layer] = (int) keep.size();
}

inline void prune_channels_in_place(Model & model, int layer, const std::vector<int> & keep) {
    model.layers[layer] = prune_layer_channels(model.layers[layer], keep);
    std::vector<int> composed(keep.size());
    for (size_t i = 0; i < keep.size(); i++) {
        composed[i] = model.kept_channel_indices[layer][keep[i]];
    }
    model.kept_channel_indices[layer] = composed;
    model.config.per_layer_dff[layer] = (int) keep.size();
}

} // namespace prunekit
