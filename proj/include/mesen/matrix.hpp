// Dense double-precision containers shared by every module.
#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace mesen {

// Row-major rows x cols matrix.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return v.size(); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

// Batch of multichannel windows: n samples x c channels x t timesteps, row-major.
struct Tensor3 {
    int n = 0;
    int c = 0;
    int t = 0;
    std::vector<double> v;

    Tensor3() = default;
    Tensor3(int n_, int c_, int t_, double fill = 0.0)
        : n(n_), c(c_), t(t_), v(static_cast<size_t>(n_) * c_ * t_, fill) {}

    double& at(int i, int ch, int j) { return v[(static_cast<size_t>(i) * c + ch) * t + j]; }
    double at(int i, int ch, int j) const { return v[(static_cast<size_t>(i) * c + ch) * t + j]; }

    // Pointer to the start of one sample's c x t block.
    double* sample(int i) { return v.data() + static_cast<size_t>(i) * c * t; }
    const double* sample(int i) const { return v.data() + static_cast<size_t>(i) * c * t; }

    size_t size() const { return v.size(); }
};

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double row_dot(const Matrix& a, int i, const Matrix& b, int j) {
    assert(a.cols == b.cols);
    return dot(a.row(i), b.row(j), a.cols);
}

inline double row_norm(const Matrix& a, int i) {
    return std::sqrt(row_dot(a, i, a, i));
}

// C = A * B  (A: m x k, B: k x n).
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    assert(a.cols == b.rows);
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

}  // namespace mesen
