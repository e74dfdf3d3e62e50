#pragma once

#include "common.hpp"
#include "linalg.hpp"

#include <utility>
#include <vector>

namespace prunekit {

//
// Linear-regression recovery: per output dimension i, fit
// O_orig_i ~ A_i * O_pruned_i + B_i on the calibration batch, then fold the
// affine map into the output projection (row scaling + bias).
//

struct RegressionCoefficients {
    std::vector<double> a;
    std::vector<double> b;
    std::vector<double> per_dim_sse_before; // identity fit (A=1, B=0)
    std::vector<double> per_dim_sse_after;  // fitted coefficients

    double sse_before_total() const {
        double s = 0.0;
        for (double v : per_dim_sse_before) {
            s += v;
        }
        return s;
    }
    double sse_after_total() const {
        double s = 0.0;
        for (double v : per_dim_sse_after) {
            s += v;
        }
        return s;
    }

    static RegressionCoefficients identity(int dims) {
        RegressionCoefficients c;
        c.a.assign((size_t) dims, 1.0);
        c.b.assign((size_t) dims, 0.0);
        c.per_dim_sse_before.assign((size_t) dims, 0.0);
        c.per_dim_sse_after.assign((size_t) dims, 0.0);
        return c;
    }
};

inline RegressionCoefficients fit_recovery(const Matrix & o_orig, const Matrix & o_pruned) {
    require(o_orig.rows == o_pruned.rows && o_orig.cols == o_pruned.cols,
            "fit_recovery: shape mismatch");
    require(o_orig.rows >= 2, "fit_recovery: need at least 2 rows");

    const int dims = o_orig.cols;
    RegressionCoefficients coeffs;
    coeffs.a.resize((size_t) dims);
    coeffs.b.resize((size_t) dims);
    coeffs.per_dim_sse_before.resize((size_t) dims);
    coeffs.per_dim_sse_after.resize((size_t) dims);

    std::vector<double> x((size_t) o_orig.rows);
    std::vector<double> y((size_t) o_orig.rows);
    for (int i = 0; i < dims; i++) {
        for (int t = 0; t < o_orig.rows; t++) {
            x[t] = o_pruned(t, i);
            y[t] = o_orig(t, i);
        }
        const auto [a, b] = fit_line_1d(x, y);
        coeffs.a[i] = a;
        coeffs.b[i] = b;
        double sse_id = 0.0;
        double sse_fit = 0.0;
        for (size_t t = 0; t < x.size(); t++) {
            const double rid = y[t] - x[t];
            const double rfit = y[t] - (a * x[t] + b);
            sse_id += rid * rid;
            sse_fit += rfit * rfit;
        }
        coeffs.per_dim_sse_before[i] = sse_id;
        coeffs.per_dim_sse_after[i] = sse_fit;
    }
    return coeffs;
}

// Fold (A, B) into a d_model x k output projection: row i scaled by A_i,
// bias_i = A_i * old_bias_i + B_i. Algebraically exact: applying the folded
// projection equals applying the original then the affine map.
// `apply_bias = false` folds only the A scaling (B dropped).
inline std::pair<Matrix, std::vector<double>> fold_recovery(const Matrix & weight,
                                                            const std::vector<double> & existing_bias,
                                                            const RegressionCoefficients & coeffs,
                                                            bool apply_bias = true) {
    require((int) coeffs.a.size() == weight.rows && coeffs.b.size() == coeffs.a.size(),
            "fold_recovery: coefficient length must match output dimension");
    Matrix out = weight;
    for (int i = 0; i < weight.rows; i++) {
        double * row = out.row_ptr(i);
        for (int j = 0; j < weight.cols; j++) {
            row[j] *= coeffs.a[i];
        }
    }
    std::vector<double> bias;
    if (apply_bias) {
        bias.resize((size_t) weight.rows);
        for (int i = 0; i < weight.rows; i++) {
            const double old_b = existing_bias.empty() ? 0.0 : existing_bias[i];
            bias[i] = coeffs.a[i] * old_b + coeffs.b[i];
        }
    } else if (!existing_bias.empty()) {
        bias.resize((size_t) weight.rows);
        for (int i = 0; i < weight.rows; i++) {
            bias[i] = coeffs.a[i] * existing_bias[i];
        }
    }
    return {std::move(out), std::move(bias)};
}

} // namespace prunekit
