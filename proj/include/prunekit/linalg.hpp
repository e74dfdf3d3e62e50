#pragma once

#include "common.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace prunekit {

//
// Dense row-major matrix of doubles. All statistics run in 64-bit; model
// weights are narrowed to f32 only at the serialization boundary.
//

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data; // rows * cols, row-major

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data((size_t) r * (size_t) c, 0.0) {}

    double & operator()(int i, int j) { return data[(size_t) i * cols + j]; }
    double operator()(int i, int j) const { return data[(size_t) i * cols + j]; }

    double * row_ptr(int i) { return data.data() + (size_t) i * cols; }
    const double * row_ptr(int i) const { return data.data() + (size_t) i * cols; }

    std::span<const double> row(int i) const { return {row_ptr(i), (size_t) cols}; }

    bool empty() const { return rows == 0 || cols == 0; }

    std::vector<double> col(int j) const {
        std::vector<double> out((size_t) rows);
        for (int i = 0; i < rows; i++) {
            out[i] = (*this)(i, j);
        }
        return out;
    }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; i++) {
            m(i, i) = 1.0;
        }
        return m;
    }
};

inline Matrix transpose(const Matrix & a) {
    Matrix t(a.cols, a.rows);
    for (int i = 0; i < a.rows; i++) {
        for (int j = 0; j < a.cols; j++) {
            t(j, i) = a(i, j);
        }
    }
    return t;
}

// c = a * b
inline Matrix matmul(const Matrix & a, const Matrix & b) {
    require(a.cols == b.rows, "matmul: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; i++) {
        const double * arow = a.row_ptr(i);
        double * crow = c.row_ptr(i);
        for (int k = 0; k < a.cols; k++) {
            const double aik = arow[k];
            if (aik == 0.0) {
                continue;
            }
            const double * brow = b.row_ptr(k);
            for (int j = 0; j < b.cols; j++) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return c;
}

// c = a * b^T; the natural product when b holds row-major projection weights
inline Matrix matmul_nt(const Matrix & a, const Matrix & b) {
    require(a.cols == b.cols, "matmul_nt: inner dimensions differ");
    Matrix c(a.rows, b.rows);
    for (int i = 0; i < a.rows; i++) {
        const double * arow = a.row_ptr(i);
        for (int j = 0; j < b.rows; j++) {
            const double * brow = b.row_ptr(j);
            double acc = 0.0;
            for (int k = 0; k < a.cols; k++) {
                acc += arow[k] * brow[k];
            }
            c(i, j) = acc;
        }
    }
    return c;
}

inline void add_inplace(Matrix & a, const Matrix & b) {
    require(a.rows == b.rows && a.cols == b.cols, "add_inplace: shape mismatch");
    for (size_t i = 0; i < a.data.size(); i++) {
        a.data[i] += b.data[i];
    }
}

inline void sub_inplace(Matrix & a, const Matrix & b) {
    require(a.rows == b.rows && a.cols == b.cols, "sub_inplace: shape mismatch");
    for (size_t i = 0; i < a.data.size(); i++) {
        a.data[i] -= b.data[i];
    }
}

inline double max_abs(const Matrix & a) {
    double m = 0.0;
    for (double v : a.data) {
        m = std::max(m, std::fabs(v));
    }
    return m;
}

//
// Covariance in the unnormalized form (X - mu)^T (X - mu), mu = column means.
//

inline Matrix covariance(const Matrix & x) {
    require(x.rows >= 2, "covariance: need at least 2 rows");
    const int n = x.rows;
    const int d = x.cols;

    std::vector<double> mean((size_t) d, 0.0);
    for (int i = 0; i < n; i++) {
        const double * row = x.row_ptr(i);
        for (int j = 0; j < d; j++) {
            mean[j] += row[j];
        }
    }
    for (int j = 0; j < d; j++) {
        mean[j] /= n;
    }

    // upper triangle, mirrored, so the result is exactly symmetric
    Matrix cov(d, d);
    Matrix centered(n, d);
    for (int i = 0; i < n; i++) {
        const double * row = x.row_ptr(i);
        double * crow = centered.row_ptr(i);
        for (int j = 0; j < d; j++) {
            crow[j] = row[j] - mean[j];
        }
    }
    for (int a = 0; a < d; a++) {
        for (int b = a; b < d; b++) {
            double acc = 0.0;
            for (int i = 0; i < n; i++) {
                acc += centered(i, a) * centered(i, b);
            }
            cov(a, b) = acc;
            cov(b, a) = acc;
        }
    }
    return cov;
}

//
// Symmetric eigendecomposition via cyclic Jacobi rotations. Eigenvalues come
// out sorted descending (ties broken by original index); eigenvectors are the
// columns of `eigenvectors`, column i pairing with eigenvalue i.
//

struct EigenDecomposition {
    std::vector<double> eigenvalues;
    Matrix eigenvectors;
};

inline EigenDecomposition sym_eig(const Matrix & s_in) {
    require(s_in.rows == s_in.cols, "sym_eig: matrix must be square");
    const int n = s_in.rows;

    double scale = max_abs(s_in);
    double max_asym = 0.0;
    for (int i = 0; i < n; i++) {
        for (int j = i + 1; j < n; j++) {
            max_asym = std::max(max_asym, std::fabs(s_in(i, j) - s_in(j, i)));
        }
    }
    require(max_asym <= 1e-9 * std::max(1.0, scale), "sym_eig: matrix is not symmetric");

    Matrix a(n, n);
    for (int i = 0; i < n; i++) {
        for (int j = 0; j < n; j++) {
            a(i, j) = 0.5 * (s_in(i, j) + s_in(j, i));
        }
    }

    Matrix v = Matrix::identity(n);

    double norm_f = 0.0;
    for (double w : a.data) {
        norm_f += w * w;
    }
    norm_f = std::sqrt(norm_f);
    const double tol = 1e-10 * norm_f;

    const int max_sweeps = 100;
    bool converged = false;
    double off = 0.0;
    for (int sweep = 0; sweep < max_sweeps; sweep++) {
        off = 0.0;
        for (int i = 0; i < n; i++) {
            for (int j = i + 1; j < n; j++) {
                off += 2.0 * a(i, j) * a(i, j);
            }
        }
        off = std::sqrt(off);
        if (off <= tol) {
            converged = true;
            break;
        }

        for (int p = 0; p < n - 1; p++) {
            for (int q = p + 1; q < n; q++) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                const double app = a(p, p);
                const double aqq = a(q, q);
                const double tau = (aqq - app) / (2.0 * apq);
                double t;
                if (tau >= 0.0) {
                    t = 1.0 / (tau + std::sqrt(1.0 + tau * tau));
                } else {
                    t = -1.0 / (-tau + std::sqrt(1.0 + tau * tau));
                }
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                a(p, p) = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                a(q, q) = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (int k = 0; k < n; k++) {
                    if (k == p || k == q) {
                        continue;
                    }
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(p, k) = a(k, p);
                    a(k, q) = s * akp + c * akq;
                    a(q, k) = a(k, q);
                }
                for (int k = 0; k < n; k++) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (!converged) {
        throw numerical_failure("sym_eig: no convergence after 100 sweeps, off-diagonal norm " +
                                std::to_string(off));
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int i, int j) {
        if (a(i, i) != a(j, j)) {
            return a(i, i) > a(j, j);
        }
        return i < j;
    });

    EigenDecomposition dec;
    dec.eigenvalues.resize((size_t) n);
    dec.eigenvectors = Matrix(n, n);
    for (int idx = 0; idx < n; idx++) {
        const int src = order[idx];
        dec.eigenvalues[idx] = a(src, src);
        for (int k = 0; k < n; k++) {
            dec.eigenvectors(k, idx) = v(k, src);
        }
    }
    return dec;
}

//
// Correlation / similarity statistics.
//

// Pearson correlation; returns 0 when either side has (population) variance
// below 1e-24, so constant signals never poison downstream scores with NaN.
inline double pearson(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "pearson: length mismatch");
    require(a.size() >= 2, "pearson: need at least 2 elements");
    const size_t n = a.size();

    double mean_a = 0.0, mean_b = 0.0;
    for (size_t i = 0; i < n; i++) {
        mean_a += a[i];
        mean_b += b[i];
    }
    mean_a /= (double) n;
    mean_b /= (double) n;

    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (size_t i = 0; i < n; i++) {
        const double da = a[i] - mean_a;
        const double db = b[i] - mean_b;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa / (double) n < 1e-24 || sbb / (double) n < 1e-24) {
        return 0.0;
    }
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "cosine: length mismatch");
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (size_t i = 0; i < a.size(); i++) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dot += a[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    require(na > 1e-30 && nb > 1e-30, "cosine: zero-norm input");
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

// Closed-form 1-D least squares: y ~ A*x + B. A degenerate x (variance below
// 1e-24) falls back to A = 1, B = mean(y - x): keep the scale, fix the mean.
inline std::pair<double, double> fit_line_1d(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size(), "fit_line_1d: length mismatch");
    require(x.size() >= 2, "fit_line_1d: need at least 2 points");
    const size_t n = x.size();

    double mean_x = 0.0, mean_y = 0.0;
    for (size_t i = 0; i < n; i++) {
        mean_x += x[i];
        mean_y += y[i];
    }
    mean_x /= (double) n;
    mean_y /= (double) n;

    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; i++) {
        const double dx = x[i] - mean_x;
        sxx += dx * dx;
        sxy += dx * (y[i] - mean_y);
    }
    if (sxx / (double) n < 1e-24) {
        return {1.0, mean_y - mean_x};
    }
    const double a = sxy / sxx;
    return {a, mean_y - a * mean_x};
}

// softmax(alpha * v), max-subtracted for stability
inline std::vector<double> softmax_scaled(std::span<const double> v, double alpha) {
    require(!v.empty(), "softmax_scaled: empty input");
    double m = alpha * v[0];
    for (size_t i = 1; i < v.size(); i++) {
        m = std::max(m, alpha * v[i]);
    }
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (size_t i = 0; i < v.size(); i++) {
        out[i] = std::exp(alpha * v[i] - m);
        sum += out[i];
    }
    for (double & e : out) {
        e /= sum;
    }
    return out;
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace prunekit
