#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isomerge/errors.hpp"
#include "isomerge/matrix.hpp"
#include "isomerge/spectral.hpp"
#include "isomerge/svd.hpp"
#include "isomerge/task_matrix.hpp"

namespace isomerge {

constexpr double kDefaultEpsilon = 0.05;

// Subspace alignment ratio: the Frobenius fraction of the source delta
// captured by the top-k_M left singular subspace of the target delta.
inline double sar(const Matrix& delta_src, const Matrix& delta_trg, std::size_t k_m) {
    const double src_norm = frobenius_norm(delta_src);
    if (src_norm == 0.0)
        fail(errc::zero_source, "source delta is the zero matrix");
    if (delta_src.rows() != delta_trg.rows())
        fail(errc::dimension_mismatch, "source and target row counts differ");
    const SvdFactors basis = thin_svd(delta_trg);
    if (k_m < 1 || k_m > basis.rank_dim())
        fail(errc::k_out_of_range, "k_M=" + std::to_string(k_m) + " outside [1, " +
                                       std::to_string(basis.rank_dim()) + "]");
    const Matrix uk = basis.u.columns(0, k_m);
    return frobenius_norm(matmul(uk, matmul_at_b(uk, delta_src))) / src_norm;
}

namespace detail {

inline const Matrix& matching_layer(const TaskMatrixSet& merged, const std::string& name) {
    const Matrix* m = merged.find_matrix(name);
    if (!m)
        fail(errc::name_set_mismatch, "merged deltas lack layer '" + name + "'");
    return *m;
}

}  // namespace detail

// Unweighted mean SAR over 2-D layers, with k_M chosen per layer from
// the merged model's spectrum. 1-D parameters have no left-singular
// subspace and are excluded.
inline double sar_avg(const TaskMatrixSet& task, const TaskMatrixSet& merged_deltas,
                      double epsilon = kDefaultEpsilon) {
    if (task.matrices.empty())
        fail(errc::no_two_d_layers, "task has no 2-D layers");
    double acc = 0.0;
    for (const auto& [name, src] : task.matrices) {
        const Matrix& trg = detail::matching_layer(merged_deltas, name);
        const std::size_t k_m = effective_rank(trg, epsilon);
        acc += sar(src, trg, k_m);
    }
    return acc / static_cast<double>(task.matrices.size());
}

inline double sar_avg(const TaskMatrixSet& task, const MergeOutcome& merged,
                      double epsilon = kDefaultEpsilon) {
    return sar_avg(task, merged.deltas, epsilon);
}

// Normalized accuracy improvement of a merged model over zero-shot,
// relative to the task-specific model's improvement.
inline double nai(double acc_merged, double acc_task, double acc_zero) {
    const double denom = acc_task - acc_zero;
    if (std::abs(denom) < 1e-12)
        fail(errc::degenerate_denominator,
             "task and zero-shot accuracies coincide; NAI is undefined");
    return (acc_merged - acc_zero) / denom;
}

// Cosine similarity between the flattened concatenations of two delta
// sets (matrices and vectors alike).
inline double vec_cosine(const TaskMatrixSet& a, const TaskMatrixSet& b) {
    if (a.matrices.size() != b.matrices.size() || a.vectors.size() != b.vectors.size())
        fail(errc::name_set_mismatch, "delta sets expose different parameters");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.matrices.size(); ++i) {
        if (a.matrices[i].first != b.matrices[i].first)
            fail(errc::name_set_mismatch, "delta sets expose different parameters");
        const Matrix& ma = a.matrices[i].second;
        const Matrix& mb = b.matrices[i].second;
        if (ma.rows() != mb.rows() || ma.cols() != mb.cols())
            fail(errc::shape_mismatch, "layer '" + a.matrices[i].first + "' shapes differ");
        for (std::size_t j = 0; j < ma.size(); ++j) {
            dot += ma.data()[j] * mb.data()[j];
            na += ma.data()[j] * ma.data()[j];
            nb += mb.data()[j] * mb.data()[j];
        }
    }
    for (std::size_t i = 0; i < a.vectors.size(); ++i) {
        if (a.vectors[i].first != b.vectors[i].first)
            fail(errc::name_set_mismatch, "delta sets expose different parameters");
        const auto& va = a.vectors[i].second;
        const auto& vb = b.vectors[i].second;
        if (va.size() != vb.size())
            fail(errc::shape_mismatch, "parameter '" + a.vectors[i].first + "' shapes differ");
        for (std::size_t j = 0; j < va.size(); ++j) {
            dot += va[j] * vb[j];
            na += va[j] * va[j];
            nb += vb[j] * vb[j];
        }
    }
    if (na == 0.0 || nb == 0.0)
        fail(errc::zero_vector, "cosine similarity with a zero delta set");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Reconstruction with the spectrum moved fraction beta of the way from
// the raw singular values toward their mean.
inline Matrix interpolate_spectrum(const Matrix& ta_layer, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0))
        fail(errc::invalid_argument, "beta must lie in [0, 1]");
    if (!ta_layer.all_finite())
        fail(errc::non_finite, "layer contains NaN or Inf");
    SvdFactors f = thin_svd(ta_layer);
    const double sigma_bar =
        std::accumulate(f.sigma.begin(), f.sigma.end(), 0.0) / static_cast<double>(f.sigma.size());
    for (double& s : f.sigma) s = (1.0 - beta) * s + beta * sigma_bar;
    return svd_reconstruct(f);
}

// Isotropic reconstruction truncated to the k strongest directions of
// the input layer; the scale stays the mean over all r singular values.
inline Matrix truncate_isotropic(const Matrix& ta_layer, std::size_t k) {
    const SvdFactors f = thin_svd(ta_layer);
    if (k < 1 || k > f.rank_dim())
        fail(errc::k_out_of_range, "k=" + std::to_string(k) + " outside [1, " +
                                       std::to_string(f.rank_dim()) + "]");
    const double sigma_bar =
        std::accumulate(f.sigma.begin(), f.sigma.end(), 0.0) / static_cast<double>(f.sigma.size());
    return sigma_bar * matmul_a_bt(f.u.columns(0, k), f.v.columns(0, k));
}

// Sample Pearson correlation.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size())
        fail(errc::length_mismatch, "series lengths differ");
    if (xs.size() < 2)
        fail(errc::length_mismatch, "need at least two points");
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        fail(errc::zero_variance, "a series has zero variance");
    return sxy / (std::sqrt(sxx) * std::sqrt(syy));
}

// ---- report assembly ----

struct AlignmentRow {
    std::string task;
    std::string layer;  // layer name, or "avg" for the per-task mean
    double sar = 0.0;
};

struct AlignmentReport {
    std::vector<AlignmentRow> rows;
    double epsilon = kDefaultEpsilon;
    std::vector<std::pair<std::string, std::size_t>> k_per_layer;
};

inline AlignmentReport alignment_report(std::span<const TaskMatrixSet> tasks,
                                        const TaskMatrixSet& merged_deltas, double epsilon) {
    if (tasks.empty() || tasks.front().matrices.empty())
        fail(errc::no_two_d_layers, "alignment needs at least one task with 2-D layers");
    AlignmentReport report;
    report.epsilon = epsilon;
    for (const auto& [name, trg] : merged_deltas.matrices)
        report.k_per_layer.emplace_back(name, effective_rank(trg, epsilon));
    for (const TaskMatrixSet& task : tasks) {
        double acc = 0.0;
        for (const auto& [name, src] : task.matrices) {
            const Matrix& trg = detail::matching_layer(merged_deltas, name);
            std::size_t k_m = 0;
            for (const auto& [n, k] : report.k_per_layer)
                if (n == name) k_m = k;
            const double value = sar(src, trg, k_m);
            report.rows.push_back({task.task_label, name, value});
            acc += value;
        }
        report.rows.push_back(
            {task.task_label, "avg", acc / static_cast<double>(task.matrices.size())});
    }
    return report;
}

struct SpectrumRow {
    std::string layer;
    std::size_t index = 0;
    double sigma = 0.0;
};

struct SpectrumReport {
    std::vector<SpectrumRow> rows;
    std::string method;
    std::optional<double> beta;
};

}  // namespace isomerge
