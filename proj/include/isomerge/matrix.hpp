#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "isomerge/errors.hpp"

namespace isomerge {

// Dense row-major matrix of doubles. All merging and metric math runs in
// 64-bit precision; conversion to/from f32 happens only at the bundle layer.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            fail(errc::dimension_mismatch, "matrix data length does not match rows*cols");
    }

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_)
                fail(errc::dimension_mismatch, "ragged initializer list");
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j)
                t(j, i) = (*this)(i, j);
        return t;
    }

    // columns [first, first+count) as a new matrix
    Matrix columns(std::size_t first, std::size_t count) const {
        if (first + count > cols_)
            fail(errc::k_out_of_range, "column slice out of range");
        Matrix out(rows_, count);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < count; ++j)
                out(i, j) = (*this)(i, first + j);
        return out;
    }

    void set_column(std::size_t j, const Matrix& src, std::size_t src_col) {
        for (std::size_t i = 0; i < rows_; ++i)
            (*this)(i, j) = src(i, src_col);
    }

    bool all_finite() const noexcept {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool is_zero() const noexcept {
        for (double v : data_)
            if (v != 0.0) return false;
        return true;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        fail(errc::dimension_mismatch, "matrix addition shape mismatch");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        fail(errc::dimension_mismatch, "matrix subtraction shape mismatch");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

inline Matrix operator*(double s, const Matrix& a) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = s * a.data()[i];
    return out;
}

// C = A * B, ikj loop order so the inner loop streams rows
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        fail(errc::dimension_mismatch, "matmul inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double* cp = c.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av = ap[i * k + l];
            if (av == 0.0) continue;
            const double* brow = bp + l * m;
            double* crow = cp + i * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// C = A^T * B without forming A^T
inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        fail(errc::dimension_mismatch, "matmul_at_b row counts differ");
    Matrix c(a.cols(), b.cols());
    const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double* cp = c.data().data();
    for (std::size_t l = 0; l < k; ++l) {
        const double* arow = ap + l * n;
        const double* brow = bp + l * m;
        for (std::size_t i = 0; i < n; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = cp + i * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// C = A * B^T without forming B^T
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        fail(errc::dimension_mismatch, "matmul_a_bt column counts differ");
    Matrix c(a.rows(), b.rows());
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double* cp = c.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = ap + i * k;
        double* crow = cp + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = bp + j * k;
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] = acc;
        }
    }
    return c;
}

inline double frobenius_norm(const Matrix& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v * v;
    return std::sqrt(acc);
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace isomerge
