#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "isomerge/errors.hpp"
#include "isomerge/matrix.hpp"
#include "isomerge/svd.hpp"

namespace isomerge {

// Smallest k such that the top-k truncation of a descending spectrum
// leaves at most eps of the total energy:
//   sqrt(sum_{i>k} sigma_i^2) <= eps * sqrt(sum_i sigma_i^2)
inline std::size_t rank_from_spectrum(std::span<const double> sigma, double eps) {
    if (eps <= 0.0 || eps >= 1.0)
        fail(errc::invalid_argument, "epsilon must lie in (0, 1)");
    double total = 0.0;
    for (double s : sigma) total += s * s;
    if (total == 0.0)
        fail(errc::zero_matrix, "spectrum of a zero matrix has no effective rank");
    const double budget = eps * eps * total;
    double tail = total;
    for (std::size_t k = 1; k <= sigma.size(); ++k) {
        tail -= sigma[k - 1] * sigma[k - 1];
        if (tail <= budget) return k;
    }
    return sigma.size();
}

inline std::size_t effective_rank(const Matrix& m, double eps) {
    if (m.is_zero())
        fail(errc::zero_matrix, "effective rank of the zero matrix is undefined");
    const SvdFactors f = thin_svd(m);
    return rank_from_spectrum(f.sigma, eps);
}

// U^{1:k} (U^{1:k})^T M for the top-k left singular vectors in `basis`
inline Matrix project_onto_topk(const Matrix& m, const SvdFactors& basis, std::size_t k) {
    if (k < 1 || k > basis.rank_dim())
        fail(errc::k_out_of_range,
             "k=" + std::to_string(k) + " outside [1, " + std::to_string(basis.rank_dim()) + "]");
    if (m.rows() != basis.u.rows())
        fail(errc::dimension_mismatch, "matrix rows do not match basis rows");
    const Matrix uk = basis.u.columns(0, k);
    return matmul(uk, matmul_at_b(uk, m));
}

// M - B B^T M for an explicit orthonormal basis B (m x k)
inline Matrix residual_against(const Matrix& m, const Matrix& basis_topk) {
    if (m.rows() != basis_topk.rows())
        fail(errc::dimension_mismatch, "matrix rows do not match basis rows");
    const Matrix gram = matmul_at_b(basis_topk, basis_topk);
    for (std::size_t i = 0; i < gram.rows(); ++i)
        for (std::size_t j = 0; j < gram.cols(); ++j) {
            const double expect = (i == j) ? 1.0 : 0.0;
            if (std::abs(gram(i, j) - expect) > 1e-8)
                fail(errc::basis_not_orthonormal, "basis columns are not orthonormal");
        }
    return m - matmul(basis_topk, matmul_at_b(basis_topk, m));
}

// Polar orthogonal factor P Q^T of A = P S Q^T: the nearest
// orthonormal-column matrix to A in Frobenius norm.
inline Matrix whiten_columns(const Matrix& a) {
    const SvdFactors f = thin_svd(a);
    if (f.sigma.empty() || f.sigma.front() == 0.0 ||
        f.sigma.back() <= 1e-10 * f.sigma.front())
        fail(errc::rank_deficient, "whitening requires full column rank");
    if (a.rows() < a.cols())
        fail(errc::rank_deficient, "more columns than rows cannot be orthonormal");
    return matmul_a_bt(f.u, f.v);
}

}  // namespace isomerge
