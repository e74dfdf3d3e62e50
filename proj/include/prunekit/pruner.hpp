#pragma once

#include "calibration.hpp"
#include "common.hpp"
#include "importance.hpp"
#include "model.hpp"
#include "ratio.hpp"
#include "recovery.hpp"

#include <json.hpp>

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace prunekit {

//
// End-to-end pipeline: trace -> allocate -> score -> prune -> recover, layer
// by layer in depth order. Layer cosines are measured once on the dense model;
// importance statistics are refreshed on the partially pruned model as it
// evolves (one-shot dense scoring available for ablation), so each regression
// sees the activations the pruned model actually produces.
//

struct PruneOptions {
    bool no_greedy = false;        // keep the plain top-k head selection
    bool no_feature_space = false; // magnitude-only channel scores
    bool no_recovery = false;      // fit but never fold the regressions
    bool uniform_ratio = false;    // same ratio on every non-skipped layer
    bool one_shot_scoring = false; // score on the dense model instead of the evolving one
    bool drop_bias_b = false;      // fold A only, discard B
};

struct LayerPlanEntry {
    int layer = -1;
    bool skipped = false;
    double ratio = 0.0;
    std::vector<int> kept_heads;
    std::vector<int> kept_channels;
    HeadScoreReport head_report;
    ChannelScoreReport channel_report;
    RegressionCoefficients recovery_mha;
    RegressionCoefficients recovery_ffn;
    bool recovery_mha_applied = false;
    bool recovery_ffn_applied = false;
};

struct PruningPlan {
    double target_ratio = 0.0;
    LayerRatioPlan ratio_plan;
    PruneOptions options;
    uint64_t seed = 0;
    int n_samples = 0;
    int seq_len = 0;
    std::vector<LayerPlanEntry> layers;
};

inline int64_t param_count(const Model & m) {
    const ModelConfig & cfg = m.config;
    int64_t total = 2ll * cfg.vocab_size * cfg.d_model; // embedding + lm_head
    total += cfg.d_model;                               // final norm
    for (int l = 0; l < cfg.n_layers; l++) {
        const LayerWeights & lw = m.layers[l];
        const int hd = cfg.per_layer_heads[l] * cfg.d_head;
        const int dff = cfg.per_layer_dff[l];
        total += 3ll * hd * cfg.d_model;  // q, k, v
        total += (int64_t) cfg.d_model * hd; // o
        total += 3ll * dff * cfg.d_model; // gate, up, down
        total += 2ll * cfg.d_model;       // attn/ffn norms
        total += (int64_t) lw.o_bias.size() + (int64_t) lw.down_bias.size();
    }
    return total;
}

// Heads and channels only: the structures the ratios budget over. Embeddings,
// norms and recovery biases never count as prunable.
inline int64_t prunable_param_count(const Model & m) {
    const ModelConfig & cfg = m.config;
    int64_t total = 0;
    for (int l = 0; l < cfg.n_layers; l++) {
        const int hd = cfg.per_layer_heads[l] * cfg.d_head;
        const int dff = cfg.per_layer_dff[l];
        total += 4ll * hd * cfg.d_model;
        total += 3ll * dff * cfg.d_model;
    }
    return total;
}

namespace detail {

struct LayerCapture {
    Matrix layer_input;
    std::vector<Matrix> head_outputs;
    Matrix mha_output;
    Matrix ffn_intermediate;
    Matrix ffn_output;
};

// Run the calibration batch up to `layer` on `model`, per-head capture scoped
// to that single layer, and concatenate along the token axis.
inline LayerCapture capture_layer(const Model & model, const CalibrationSet & calib, int layer) {
    CaptureSpec spec;
    spec.sublayer_layers = {layer};
    spec.per_head_layers = {layer};
    spec.stop_after_layer = layer;
    const ActivationTrace merged = concat_traces(collect_traces(model, calib, spec));
    const LayerTrace & lt = merged.layers[(size_t) layer];
    LayerCapture cap;
    cap.layer_input = lt.layer_input;
    cap.head_outputs = lt.head_outputs;
    cap.mha_output = lt.mha_output;
    cap.ffn_intermediate = lt.ffn_intermediate;
    cap.ffn_output = lt.ffn_output;
    return cap;
}

} // namespace detail

inline std::pair<Model, PruningPlan> prune_pipeline(const Model & model,
                                                    const CalibrationSet & calib,
                                                    double target_ratio, double alpha,
                                                    const std::set<int> & skip,
                                                    const PruneOptions & options = {}) {
    model.config.validate();
    const int n_layers = model.config.n_layers;

    PruningPlan plan;
    plan.target_ratio = target_ratio;
    plan.options = options;
    plan.seed = calib.seed;
    plan.n_samples = calib.n_samples;
    plan.seq_len = calib.seq_len;

    // layer cosines on the original dense model, before any surgery
    {
        CaptureSpec io_spec;
        io_spec.layer_io = true;
        const auto traces = collect_traces(model, calib, io_spec);
        const std::vector<double> cosines = layer_cosines(traces);
        plan.ratio_plan = allocate(cosines, target_ratio, options.uniform_ratio ? 0.0 : alpha, skip);
    }

    Model work = model;
    plan.layers.resize((size_t) n_layers);

    for (int l = 0; l < n_layers; l++) {
        LayerPlanEntry & entry = plan.layers[(size_t) l];
        entry.layer = l;
        entry.ratio = plan.ratio_plan.ratios[(size_t) l];
        entry.kept_heads = work.kept_head_indices[l];
        entry.kept_channels = work.kept_channel_indices[l];
        entry.recovery_mha = RegressionCoefficients::identity(model.config.d_model);
        entry.recovery_ffn = RegressionCoefficients::identity(model.config.d_model);
        entry.head_report.layer = l;
        entry.channel_report.layer = l;

        if (skip.count(l) || entry.ratio == 0.0) {
            entry.skipped = true;
            continue;
        }

        const int heads = work.config.per_layer_heads[l];
        const int dff = work.config.per_layer_dff[l];
        const auto [heads_keep, channels_keep] = ratio_to_counts(entry.ratio, heads, dff);
        if (heads_keep == heads && channels_keep == dff) {
            entry.skipped = true; // rounding kept everything
            continue;
        }

        const Model & scoring_model = options.one_shot_scoring ? model : work;
        detail::LayerCapture cap = detail::capture_layer(scoring_model, calib, l);

        // ---- MHA: score, refine, slice, recover ----
        entry.head_report = greedy_refine(head_scores(cap.head_outputs, cap.mha_output), heads_keep,
                                          cap.head_outputs, cap.mha_output, options.no_greedy);
        entry.head_report.layer = l;

        if (heads_keep < heads) {
            prune_heads_in_place(work, l, entry.head_report.refined_keep);
            Matrix o_pruned(cap.mha_output.rows, cap.mha_output.cols);
            for (int i : entry.head_report.refined_keep) {
                add_inplace(o_pruned, cap.head_outputs[i]);
            }
            entry.recovery_mha = fit_recovery(cap.mha_output, o_pruned);
            if (!options.no_recovery) {
                auto [folded, bias] = fold_recovery(work.layers[l].w_o, work.layers[l].o_bias,
                                                    entry.recovery_mha, !options.drop_bias_b);
                work.layers[l].w_o = std::move(folded);
                work.layers[l].o_bias = std::move(bias);
                entry.recovery_mha_applied = true;
            }
        }

        // ---- FFN: feature-space importance, slice, recover ----
        const LayerWeights & before = options.one_shot_scoring ? model.layers[l] : work.layers[l];
        entry.channel_report =
            channel_importance(cap.ffn_intermediate, cap.ffn_output, cap.layer_input,
                               before.w_gate, before.w_up, before.w_down,
                               !options.no_feature_space);
        entry.channel_report.layer = l;

        if (channels_keep < dff) {
            const std::vector<int> keep_ch = select_channels(entry.channel_report, channels_keep);
            prune_channels_in_place(work, l, keep_ch);
            // pruned FFN output on the same captured intermediate
            Matrix inter_kept(cap.ffn_intermediate.rows, (int) keep_ch.size());
            for (int t = 0; t < cap.ffn_intermediate.rows; t++) {
                for (size_t j = 0; j < keep_ch.size(); j++) {
                    inter_kept(t, (int) j) = cap.ffn_intermediate(t, keep_ch[j]);
                }
            }
            const Matrix o_pruned = matmul_nt(inter_kept, work.layers[l].w_down);
            entry.recovery_ffn = fit_recovery(cap.ffn_output, o_pruned);
            if (!options.no_recovery) {
                auto [folded, bias] = fold_recovery(work.layers[l].w_down, work.layers[l].down_bias,
                                                    entry.recovery_ffn, !options.drop_bias_b);
                work.layers[l].w_down = std::move(folded);
                work.layers[l].down_bias = std::move(bias);
                entry.recovery_ffn_applied = true;
            }
        } else {
            entry.channel_report.keep = work.kept_channel_indices[l];
        }

        entry.kept_heads = work.kept_head_indices[l];
        entry.kept_channels = work.kept_channel_indices[l];
    }

    return {std::move(work), std::move(plan)};
}

//
// plan.json: ratios, keep sets, per-layer reports and regression summaries.
//

inline nlohmann::ordered_json plan_to_json(const PruningPlan & plan) {
    nlohmann::ordered_json j;
    j["target_ratio"] = plan.target_ratio;
    j["alpha"] = plan.ratio_plan.alpha;
    j["r0"] = plan.ratio_plan.r0;
    j["skip_layers"] = std::vector<int>(plan.ratio_plan.skip.begin(), plan.ratio_plan.skip.end());
    j["clamped"] = plan.ratio_plan.clamped;
    j["seed"] = plan.seed;
    j["n_samples"] = plan.n_samples;
    j["seq_len"] = plan.seq_len;
    j["options"] = {{"no_greedy", plan.options.no_greedy},
                    {"no_feature_space", plan.options.no_feature_space},
                    {"no_recovery", plan.options.no_recovery},
                    {"uniform_ratio", plan.options.uniform_ratio},
                    {"one_shot_scoring", plan.options.one_shot_scoring},
                    {"drop_bias_b", plan.options.drop_bias_b}};
    j["cosine_sims"] = plan.ratio_plan.cosine_sims;
    j["ratios"] = plan.ratio_plan.ratios;

    auto coeff_summary = [](const RegressionCoefficients & c, bool applied) {
        double mean_a = 0.0, mean_b = 0.0;
        for (double v : c.a) {
            mean_a += v;
        }
        for (double v : c.b) {
            mean_b += v;
        }
        if (!c.a.empty()) {
            mean_a /= (double) c.a.size();
            mean_b /= (double) c.b.size();
        }
        return nlohmann::ordered_json{{"applied", applied},
                                      {"mean_a", mean_a},
                                      {"mean_b", mean_b},
                                      {"sse_before", c.sse_before_total()},
                                      {"sse_after", c.sse_after_total()}};
    };

    j["layers"] = nlohmann::ordered_json::array();
    for (const LayerPlanEntry & e : plan.layers) {
        nlohmann::ordered_json le;
        le["layer"] = e.layer;
        le["skipped"] = e.skipped;
        le["ratio"] = e.ratio;
        le["kept_heads"] = e.kept_heads;
        le["kept_channels"] = e.kept_channels;
        if (!e.skipped) {
            nlohmann::ordered_json swaps = nlohmann::ordered_json::array();
            for (const HeadSwap & s : e.head_report.swap_log) {
                swaps.push_back({s.pruned_in, s.pruned_out, s.similarity});
            }
            le["head_report"] = {{"scores", e.head_report.scores},
                                 {"initial_keep", e.head_report.initial_keep},
                                 {"refined_keep", e.head_report.refined_keep},
                                 {"initial_similarity", e.head_report.initial_similarity},
                                 {"refined_similarity", e.head_report.refined_similarity},
                                 {"swap_log", swaps}};
            le["channel_report"] = {{"eigenvalues", e.channel_report.eigenvalues},
                                    {"smoothed", e.channel_report.smoothed},
                                    {"directional", e.channel_report.directional},
                                    {"combined", e.channel_report.combined},
                                    {"keep", e.channel_report.keep}};
            le["recovery_mha"] = coeff_summary(e.recovery_mha, e.recovery_mha_applied);
            le["recovery_ffn"] = coeff_summary(e.recovery_ffn, e.recovery_ffn_applied);
        }
        j["layers"].push_back(std::move(le));
    }
    return j;
}

} // namespace prunekit
