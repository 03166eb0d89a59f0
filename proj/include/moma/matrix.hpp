#pragma once

// Minimal row-major dense matrix over double. The numerics in this library
// run on small instances (embedding widths, class counts), so clarity wins
// over BLAS here; the test suite checks the algebra against naive loop
// references anyway.

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#include "moma/core.hpp"

namespace moma {

using Vec = std::vector<double>;

class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), v_(rows * cols, fill) {}
    Mat(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), v_(std::move(values)) {
        if (v_.size() != rows_ * cols_) throw Error("matrix value count does not match shape");
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    double& operator()(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }

    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    Vec row(std::size_t r) const {
        return Vec(v_.begin() + static_cast<std::ptrdiff_t>(r * cols_),
                   v_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols_));
    }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    friend bool operator==(const Mat&, const Mat&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> v_;
};

inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) throw Error("matmul shape mismatch");
    Mat out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    return out;
}

inline Mat transpose(const Mat& a) {
    Mat out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

inline Mat operator+(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("matrix add shape mismatch");
    Mat out = a;
    for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] += b.values()[i];
    return out;
}

inline Mat operator*(double s, const Mat& a) {
    Mat out = a;
    for (double& x : out.values()) x *= s;
    return out;
}

inline Vec matvec(const Mat& a, const Vec& x) {
    if (a.cols() != x.size()) throw Error("matvec shape mismatch");
    Vec out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out[i] += a(i, j) * x[j];
    return out;
}

// A x + b
inline Vec matvec(const Mat& a, const Vec& x, const Vec& bias) {
    if (a.rows() != bias.size()) throw Error("matvec bias shape mismatch");
    Vec out = matvec(a, x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i];
    return out;
}

// x y^T
inline Mat outer(const Vec& x, const Vec& y) {
    Mat out(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) out(i, j) = x[i] * y[j];
    return out;
}

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw Error("dot shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline Vec mean_rows(const Mat& a) {
    if (a.rows() == 0) throw Error("mean over zero rows");
    Vec out(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j);
    for (double& x : out) x /= static_cast<double>(a.rows());
    return out;
}

} // namespace moma
