#pragma once

#include "common.hpp"
#include "linalg.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <vector>

namespace prunekit {

//
// Head importance: Score_i = -pearson(full output, full output minus head i),
// both flattened row-major over all N x d_model entries. A head whose removal
// leaves the output perfectly correlated scores -1 (least important).
//

inline double pearson_flat(const Matrix & a, const Matrix & b) {
    return pearson(std::span<const double>(a.data), std::span<const double>(b.data));
}

inline std::vector<double> head_scores(const std::vector<Matrix> & head_outputs,
                                       const Matrix & mha_output) {
    require(!head_outputs.empty(), "head_scores: no head outputs");
    std::vector<double> scores;
    scores.reserve(head_outputs.size());
    Matrix without = mha_output;
    bool warned = false;
    for (const Matrix & h : head_outputs) {
        without = mha_output;
        sub_inplace(without, h);
        const double r = pearson_flat(mha_output, without);
        if (r == 0.0 && !warned && max_abs(mha_output) < 1e-12) {
            std::fprintf(stderr, "warning: zero-variance attention output, head scores default to 0\n");
            warned = true;
        }
        scores.push_back(-r);
    }
    return scores;
}

struct HeadSwap {
    int pruned_in = -1;  // head promoted from the pruned set
    int pruned_out = -1; // head demoted out of the kept set
    double similarity = 0.0;
};

struct HeadScoreReport {
    int layer = -1;
    std::vector<double> scores;
    std::vector<int> initial_keep;
    std::vector<int> refined_keep;
    double initial_similarity = 0.0;
    double refined_similarity = 0.0;
    std::vector<HeadSwap> swap_log;
};

namespace detail {

inline Matrix sum_of(const std::vector<Matrix> & mats, const std::vector<int> & idx) {
    Matrix acc(mats[0].rows, mats[0].cols);
    for (int i : idx) {
        add_inplace(acc, mats[i]);
    }
    return acc;
}

} // namespace detail

// Highest-score top-k selection (prune the lowest scores); ties keep the
// lower head index. Result sorted ascending.
inline std::vector<int> top_k_heads(const std::vector<double> & scores, int k_keep) {
    require(k_keep >= 1 && k_keep <= (int) scores.size(), "top_k_heads: k out of range");
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return a < b;
    });
    std::vector<int> keep(order.begin(), order.begin() + k_keep);
    std::sort(keep.begin(), keep.end());
    return keep;
}

// Greedy swap search between the pruned and kept sets. For each pruned head
// (ascending), every kept head is tried as the swap victim; the best strictly
// improving candidate is applied before the next pruned head is considered.
// `no_swaps` reports the plain top-k selection in the same shape.
inline HeadScoreReport greedy_refine(const std::vector<double> & scores, int k_keep,
                                     const std::vector<Matrix> & head_outputs,
                                     const Matrix & mha_output, bool no_swaps = false) {
    const int h = (int) head_outputs.size();
    require((int) scores.size() == h, "greedy_refine: score/head count mismatch");
    require(k_keep >= 1 && k_keep <= h, "greedy_refine: k_keep out of range");

    HeadScoreReport report;
    report.scores = scores;
    report.initial_keep = top_k_heads(scores, k_keep);

    std::vector<int> kept = report.initial_keep;
    std::vector<char> in_kept((size_t) h, 0);
    for (int i : kept) {
        in_kept[i] = 1;
    }
    std::vector<int> pruned;
    for (int i = 0; i < h; i++) {
        if (!in_kept[i]) {
            pruned.push_back(i);
        }
    }

    Matrix kept_sum = detail::sum_of(head_outputs, kept);
    double sim = pearson_flat(kept_sum, mha_output);
    report.initial_similarity = sim;

    if (!no_swaps) {
        Matrix candidate;
        for (int hi : pruned) {
            const std::vector<int> snapshot = kept;
            int best_out = -1;
            double best_sim = sim;
            for (int hj : snapshot) {
                candidate = kept_sum;
                sub_inplace(candidate, head_outputs[hj]);
                add_inplace(candidate, head_outputs[hi]);
                const double s = pearson_flat(candidate, mha_output);
                if (s > best_sim) {
                    best_sim = s;
                    best_out = hj;
                }
            }
            if (best_out >= 0) {
                sim = best_sim;
                report.swap_log.push_back({hi, best_out, sim});
                kept.erase(std::find(kept.begin(), kept.end(), best_out));
                kept.push_back(hi);
                std::sort(kept.begin(), kept.end());
                kept_sum = detail::sum_of(head_outputs, kept);
            }
        }
    }

    report.refined_keep = kept;
    report.refined_similarity = sim;
    return report;
}

//
// FFN channel importance in the output feature space: project w_down onto the
// eigenvectors of the output covariance, weight each direction by its
// sigmoid-smoothed eigenvalue, and combine with activation-weighted gate/up
// row norms. With use_feature_space = false the directional term degrades to
// the plain w_down column norm (magnitude-only ablation).
//

struct ChannelScoreReport {
    int layer = -1;
    std::vector<double> eigenvalues; // M, descending, clamped at 0
    std::vector<double> smoothed;    // C_i = sigmoid(M_i / mean(M))
    std::vector<double> directional; // I^d per channel
    std::vector<double> combined;    // I per channel
    std::vector<int> keep;
};

inline ChannelScoreReport channel_importance(const Matrix & ffn_intermediate,
                                             const Matrix & ffn_output, const Matrix & layer_input,
                                             const Matrix & w_gate, const Matrix & w_up,
                                             const Matrix & w_down, bool use_feature_space = true) {
    const int d_ff = w_down.cols;
    const int d_model = w_down.rows;
    require(ffn_intermediate.cols == d_ff, "channel_importance: intermediate width mismatch");
    require(ffn_output.cols == d_model, "channel_importance: output width mismatch");
    require(layer_input.cols == d_model, "channel_importance: input width mismatch");
    require(w_gate.rows == d_ff && w_up.rows == d_ff, "channel_importance: gate/up height mismatch");
    require(ffn_intermediate.rows == ffn_output.rows,
            "channel_importance: token count mismatch");

    ChannelScoreReport report;
    report.directional.assign((size_t) d_ff, 0.0);

    if (use_feature_space) {
        const Matrix cov = covariance(ffn_output);
        EigenDecomposition eig = sym_eig(cov);

        report.eigenvalues = eig.eigenvalues;
        for (double & m : report.eigenvalues) {
            m = std::max(m, 0.0); // covariance is PSD, tiny negatives are noise
        }
        double mean_eig = 0.0;
        for (double m : report.eigenvalues) {
            mean_eig += m;
        }
        mean_eig /= (double) report.eigenvalues.size();

        report.smoothed.resize(report.eigenvalues.size());
        for (size_t i = 0; i < report.eigenvalues.size(); i++) {
            report.smoothed[i] = mean_eig > 0.0 ? sigmoid(report.eigenvalues[i] / mean_eig)
                                                : sigmoid(0.0);
        }

        // W' = w_down^T Q, row j = channel j's image in the feature space
        for (int j = 0; j < d_ff; j++) {
            double acc = 0.0;
            for (int i = 0; i < d_model; i++) {
                double wji = 0.0;
                for (int k = 0; k < d_model; k++) {
                    wji += w_down(k, j) * eig.eigenvectors(k, i);
                }
                const double weighted = wji * report.smoothed[i];
                acc += weighted * weighted;
            }
            report.directional[j] = std::sqrt(acc);
        }
    } else {
        for (int j = 0; j < d_ff; j++) {
            double acc = 0.0;
            for (int k = 0; k < d_model; k++) {
                acc += w_down(k, j) * w_down(k, j);
            }
            report.directional[j] = std::sqrt(acc);
        }
    }

    // per-channel input norm ||X_j|| over all calibration tokens
    std::vector<double> x_norm((size_t) d_ff, 0.0);
    for (int t = 0; t < ffn_intermediate.rows; t++) {
        const double * row = ffn_intermediate.row_ptr(t);
        for (int j = 0; j < d_ff; j++) {
            x_norm[j] += row[j] * row[j];
        }
    }
    for (double & v : x_norm) {
        v = std::sqrt(v);
    }

    // per-input-feature norms feeding gate/up (Wanda-style aggregation)
    std::vector<double> x_l2((size_t) d_model, 0.0);
    for (int t = 0; t < layer_input.rows; t++) {
        const double * row = layer_input.row_ptr(t);
        for (int k = 0; k < d_model; k++) {
            x_l2[k] += row[k] * row[k];
        }
    }
    for (double & v : x_l2) {
        v = std::sqrt(v);
    }

    report.combined.resize((size_t) d_ff);
    for (int j = 0; j < d_ff; j++) {
        double gate_acc = 0.0;
        double up_acc = 0.0;
        const double * grow = w_gate.row_ptr(j);
        const double * urow = w_up.row_ptr(j);
        for (int k = 0; k < d_model; k++) {
            const double g = x_l2[k] * grow[k];
            const double u = x_l2[k] * urow[k];
            gate_acc += g * g;
            up_acc += u * u;
        }
        report.combined[j] =
            x_norm[j] * report.directional[j] + std::sqrt(gate_acc) + std::sqrt(up_acc);
    }
    return report;
}

// Top-k channels by combined score, ties to the lower index; the keep set is
// recorded in the report and returned sorted ascending.
inline std::vector<int> select_channels(ChannelScoreReport & report, int k_keep) {
    const int d_ff = (int) report.combined.size();
    require(k_keep >= 1 && k_keep <= d_ff, "select_channels: k out of range");
    std::vector<int> order((size_t) d_ff);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (report.combined[a] != report.combined[b]) {
            return report.combined[a] > report.combined[b];
        }
        return a < b;
    });
    std::vector<int> keep(order.begin(), order.begin() + k_keep);
    std::sort(keep.begin(), keep.end());
    report.keep = keep;
    return keep;
}

} // namespace prunekit
