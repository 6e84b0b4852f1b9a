#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "isomerge/errors.hpp"
#include "isomerge/matrix.hpp"

namespace isomerge {

// Thin SVD factors with r = min(m, n), zero singular values included.
// sigma is non-increasing; U and V have orthonormal columns. Sign
// convention: in each column of U the entry of largest magnitude
// (lowest index on ties) is non-negative, with V flipped to match.
struct SvdFactors {
    Matrix u;                    // m x r
    std::vector<double> sigma;   // length r, descending, >= 0
    Matrix v;                    // n x r

    std::size_t rank_dim() const noexcept { return sigma.size(); }
};

namespace detail {

// column 2-norm scaled against overflow/underflow
inline double column_norm(const Matrix& w, std::size_t j) {
    double peak = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) peak = std::max(peak, std::abs(w(i, j)));
    if (peak == 0.0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const double t = w(i, j) / peak;
        acc += t * t;
    }
    return peak * std::sqrt(acc);
}

// One-sided Jacobi for m >= n: rotates columns of W until mutually
// orthogonal, accumulating rotations into V. Returns false if the sweep
// cap is exceeded.
inline bool jacobi_orthogonalize(Matrix& w, Matrix& v, std::size_t max_sweeps) {
    const std::size_t m = w.rows(), n = w.cols();
    constexpr double tol = 1e-14;
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double a = 0.0, b = 0.0, c = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p), wq = w(i, q);
                    a += wp * wp;
                    b += wq * wq;
                    c += wp * wq;
                }
                if (a == 0.0 || b == 0.0) continue;
                if (std::abs(c) <= tol * std::sqrt(a) * std::sqrt(b)) continue;
                const double zeta = (b - a) / (2.0 * c);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p), wq = w(i, q);
                    w(i, p) = cs * wp - sn * wq;
                    w(i, q) = sn * wp + cs * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = cs * vp - sn * vq;
                    v(i, q) = sn * vp + cs * vq;
                }
                rotated = true;
            }
        }
        if (!rotated) return true;
    }
    return false;
}

// Fill column `slot` of u with a unit vector orthogonal to columns
// [0, slot). Seeds from the standard basis; the seed with the largest
// residual wins (lowest index on ties), so the result is deterministic.
inline void complete_basis_column(Matrix& u, std::size_t slot) {
    const std::size_t m = u.rows();
    std::vector<double> best(m, 0.0), cand(m, 0.0);
    double best_norm = -1.0;
    for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t i = 0; i < m; ++i) cand[i] = (i == s) ? 1.0 : 0.0;
        for (std::size_t j = 0; j < slot; ++j) {
            double dot = 0.0;
            for (std::size_t i = 0; i < m; ++i) dot += u(i, j) * cand[i];
            for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * u(i, j);
        }
        double norm = 0.0;
        for (double x : cand) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > best_norm) {
            best_norm = norm;
            best = cand;
        }
    }
    // one re-orthogonalization pass tightens the result
    for (std::size_t j = 0; j < slot; ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += u(i, j) * best[i];
        for (std::size_t i = 0; i < m; ++i) best[i] -= dot * u(i, j);
    }
    double norm = 0.0;
    for (double x : best) norm += x * x;
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < m; ++i) u(i, slot) = best[i] / norm;
}

inline void apply_sign_convention(Matrix& u, Matrix& v) {
    for (std::size_t j = 0; j < u.cols(); ++j) {
        std::size_t arg = 0;
        double peak = -1.0;
        for (std::size_t i = 0; i < u.rows(); ++i) {
            const double mag = std::abs(u(i, j));
            if (mag > peak) {
                peak = mag;
                arg = i;
            }
        }
        if (u(arg, j) < 0.0) {
            for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
            for (std::size_t i = 0; i < v.rows(); ++i) v(i, j) = -v(i, j);
        }
    }
}

inline SvdFactors thin_svd_tall(const Matrix& a) {
    const std::size_t m = a.rows(), n = a.cols();  // m >= n, r = n
    Matrix w = a;
    Matrix vacc = Matrix::identity(n);
    const std::size_t max_sweeps = 100 * std::max<std::size_t>(n, 1);
    if (!jacobi_orthogonalize(w, vacc, max_sweeps))
        fail(errc::no_convergence, "Jacobi SVD exceeded the sweep cap");

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) norms[j] = column_norm(w, j);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return norms[i] > norms[j]; });

    SvdFactors f;
    f.u = Matrix(m, n);
    f.v = Matrix(n, n);
    f.sigma.resize(n);
    std::vector<std::size_t> zero_slots;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        const double s = norms[src];
        f.sigma[j] = s;
        f.v.set_column(j, vacc, src);
        if (s > 0.0) {
            for (std::size_t i = 0; i < m; ++i) f.u(i, j) = w(i, src) / s;
        } else {
            zero_slots.push_back(j);
        }
    }
    // zero slots sit at the tail after sorting
    for (std::size_t slot : zero_slots) complete_basis_column(f.u, slot);
    apply_sign_convention(f.u, f.v);
    return f;
}

}  // namespace detail

inline SvdFactors thin_svd(const Matrix& a) {
    if (a.rows() == 0 || a.cols() == 0)
        fail(errc::dimension_mismatch, "cannot factor an empty matrix");
    if (!a.all_finite())
        fail(errc::non_finite, "matrix contains NaN or Inf");
    if (a.rows() >= a.cols()) return detail::thin_svd_tall(a);
    SvdFactors t = detail::thin_svd_tall(a.transposed());
    SvdFactors f;
    f.u = std::move(t.v);
    f.v = std::move(t.u);
    f.sigma = std::move(t.sigma);
    detail::apply_sign_convention(f.u, f.v);
    return f;
}

// U * diag(sigma) * V^T
inline Matrix svd_reconstruct(const SvdFactors& f) {
    Matrix us = f.u;
    for (std::size_t j = 0; j < f.sigma.size(); ++j)
        for (std::size_t i = 0; i < us.rows(); ++i) us(i, j) *= f.sigma[j];
    return matmul_a_bt(us, f.v);
}

}  // namespace isomerge
