#pragma once

#include "common.hpp"
#include "linalg.hpp"
#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

namespace prunekit {

//
// Layerwise ratio allocation: layers whose output stays close to their input
// (high cosine similarity) are the redundant ones and receive the larger
// pruning ratios. ratios = r0 * softmax(alpha * cosines) over non-skipped
// layers, r0 = target_ratio * n_layers so the mean ratio across all layers
// equals the global target.
//

constexpr double kMaxLayerRatio = 0.95;

struct LayerRatioPlan {
    std::vector<double> cosine_sims;
    std::set<int> skip;
    double alpha = 0.0;
    double r0 = 0.0;
    std::vector<double> ratios;
    bool clamped = false;
};

// Mean cosine between matching rows of layer input and layer output over all
// calibration tokens. Zero-norm rows are excluded from the mean (reported to
// stderr), matching the convention that an empty direction carries no signal.
inline std::vector<double> layer_cosines(const std::vector<ActivationTrace> & traces) {
    require(!traces.empty(), "layer_cosines: no traces");
    const size_t n_layers = traces[0].layers.size();
    std::vector<double> sums(n_layers, 0.0);
    std::vector<long> counts(n_layers, 0);
    long excluded = 0;

    for (const ActivationTrace & trace : traces) {
        require(trace.layers.size() == n_layers, "layer_cosines: layer count mismatch");
        for (size_t l = 0; l < n_layers; l++) {
            const Matrix & in = trace.layers[l].layer_input;
            const Matrix & out = trace.layers[l].layer_output;
            require(!in.empty() && !out.empty(),
                    "layer_cosines: traces missing layer input/output capture");
            require(in.rows == out.rows, "layer_cosines: row mismatch");
            for (int t = 0; t < in.rows; t++) {
                double na = 0.0, nb = 0.0, dot = 0.0;
                const double * a = in.row_ptr(t);
                const double * b = out.row_ptr(t);
                for (int j = 0; j < in.cols; j++) {
                    na += a[j] * a[j];
                    nb += b[j] * b[j];
                    dot += a[j] * b[j];
                }
                if (na <= 1e-60 || nb <= 1e-60) {
                    excluded++;
                    continue;
                }
                sums[l] += dot / (std::sqrt(na) * std::sqrt(nb));
                counts[l]++;
            }
        }
    }
    if (excluded > 0) {
        std::fprintf(stderr, "layer_cosines: excluded %ld zero-norm token rows\n", excluded);
    }
    std::vector<double> result(n_layers, 0.0);
    for (size_t l = 0; l < n_layers; l++) {
        require(counts[l] > 0, "layer_cosines: no usable tokens at layer " + std::to_string(l));
        result[l] = sums[l] / (double) counts[l];
    }
    return result;
}

inline LayerRatioPlan allocate(const std::vector<double> & cosine_sims, double target_ratio,
                               double alpha, const std::set<int> & skip) {
    const int n_layers = (int) cosine_sims.size();
    require(n_layers >= 1, "allocate: no layers");
    require(target_ratio >= 0.0 && target_ratio <= kMaxLayerRatio,
            "allocate: target_ratio out of [0, 0.95]");
    for (int s : skip) {
        require(s >= 0 && s < n_layers, "allocate: skip index out of range");
    }
    std::vector<int> active;
    for (int l = 0; l < n_layers; l++) {
        if (!skip.count(l)) {
            active.push_back(l);
        }
    }
    require(!active.empty(), "allocate: every layer is skipped");

    LayerRatioPlan plan;
    plan.cosine_sims = cosine_sims;
    plan.skip = skip;
    plan.alpha = alpha;
    plan.r0 = target_ratio * n_layers;
    plan.ratios.assign((size_t) n_layers, 0.0);

    if (target_ratio == 0.0) {
        return plan;
    }
    require(plan.r0 <= kMaxLayerRatio * (double) active.size() + 1e-12,
            "allocate: infeasible target, needs mean ratio above 0.95 on non-skipped layers");

    std::vector<double> sims;
    for (int l : active) {
        sims.push_back(cosine_sims[l]);
    }
    const std::vector<double> weights = softmax_scaled(sims, alpha);
    std::vector<double> r(active.size());
    for (size_t i = 0; i < active.size(); i++) {
        r[i] = plan.r0 * weights[i];
    }

    // clamp at 0.95, spreading the excess proportionally over the unclamped
    // layers; feasibility above guarantees a fixed point
    for (int iter = 0; iter < n_layers; iter++) {
        double excess = 0.0;
        double unclamped_sum = 0.0;
        bool any_over = false;
        for (double v : r) {
            if (v > kMaxLayerRatio) {
                any_over = true;
                excess += v - kMaxLayerRatio;
            } else if (v < kMaxLayerRatio) {
                unclamped_sum += v;
            }
        }
        if (!any_over) {
            break;
        }
        plan.clamped = true;
        for (double & v : r) {
            if (v > kMaxLayerRatio) {
                v = kMaxLayerRatio;
            } else if (v < kMaxLayerRatio && unclamped_sum > 0.0) {
                v += excess * (v / unclamped_sum);
            }
        }
    }
    for (double & v : r) {
        v = std::min(v, kMaxLayerRatio);
    }

    for (size_t i = 0; i < active.size(); i++) {
        plan.ratios[active[i]] = r[i];
    }
    return plan;
}

// Ratio -> surviving structure counts; round half away from zero, floor 1.
inline std::pair<int, int> ratio_to_counts(double ratio, int n_heads, int d_ff) {
    require(ratio >= 0.0 && ratio <= kMaxLayerRatio, "ratio_to_counts: ratio out of [0, 0.95]");
    const int heads_keep = std::max(1, (int) std::llround((double) n_heads * (1.0 - ratio)));
    const int channels_keep = std::max(1, (int) std::llround((double) d_ff * (1.0 - ratio)));
    return {heads_keep, channels_keep};
}

} // namespace prunekit
