#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isomerge/errors.hpp"
#include "isomerge/matrix.hpp"
#include "isomerge/parallel.hpp"
#include "isomerge/spectral.hpp"
#include "isomerge/svd.hpp"
#include "isomerge/task_matrix.hpp"
#include "isomerge/tensor.hpp"

namespace isomerge {

namespace detail {

inline void check_aligned_tasks(std::span<const TaskMatrixSet> tasks) {
    if (tasks.empty())
        fail(errc::empty_task_list, "need at least one task to merge");
    const TaskMatrixSet& head = tasks.front();
    for (std::size_t t = 1; t < tasks.size(); ++t) {
        const TaskMatrixSet& cur = tasks[t];
        if (cur.matrices.size() != head.matrices.size() ||
            cur.vectors.size() != head.vectors.size())
            fail(errc::name_set_mismatch, "tasks expose different parameter sets");
        for (std::size_t i = 0; i < head.matrices.size(); ++i) {
            if (cur.matrices[i].first != head.matrices[i].first)
                fail(errc::name_set_mismatch, "tasks expose different parameter sets");
            if (cur.matrices[i].second.rows() != head.matrices[i].second.rows() ||
                cur.matrices[i].second.cols() != head.matrices[i].second.cols())
                fail(errc::shape_mismatch,
                     "shape mismatch in layer '" + head.matrices[i].first + "'");
        }
        for (std::size_t i = 0; i < head.vectors.size(); ++i) {
            if (cur.vectors[i].first != head.vectors[i].first)
                fail(errc::name_set_mismatch, "tasks expose different parameter sets");
            if (cur.vectors[i].second.size() != head.vectors[i].second.size())
                fail(errc::shape_mismatch,
                     "shape mismatch in parameter '" + head.vectors[i].first + "'");
        }
    }
}

// tasks summed in input list order: the reduction order is part of the
// determinism contract
inline Matrix sum_layer(std::span<const TaskMatrixSet> tasks, std::size_t layer) {
    Matrix acc = tasks.front().matrices[layer].second;
    for (std::size_t t = 1; t < tasks.size(); ++t) {
        const Matrix& m = tasks[t].matrices[layer].second;
        for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += m.data()[i];
    }
    return acc;
}

inline std::vector<double> mean_vector(std::span<const TaskMatrixSet> tasks, std::size_t idx) {
    std::vector<double> acc = tasks.front().vectors[idx].second;
    for (std::size_t t = 1; t < tasks.size(); ++t) {
        const auto& v = tasks[t].vectors[idx].second;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
    }
    const double inv = 1.0 / static_cast<double>(tasks.size());
    for (double& x : acc) x *= inv;
    return acc;
}

// round half away from zero, platform-stable
inline std::size_t round_half_away(double x) {
    return static_cast<std::size_t>(std::floor(x + 0.5));
}

struct IsoLayer {
    Matrix delta;
    LayerMeta meta;
};

// Iso-C for one layer: replace the spectrum of the summed task matrix
// with its mean over all r = min(m, n) singular values.
inline IsoLayer iso_c_layer(const Matrix& ta_sum) {
    IsoLayer out;
    out.meta.method = MergeMethod::ISO_C;
    out.meta.r = std::min(ta_sum.rows(), ta_sum.cols());
    if (ta_sum.is_zero()) {
        out.delta = Matrix(ta_sum.rows(), ta_sum.cols());
        out.meta.zero_sum = true;
        return out;
    }
    const SvdFactors f = thin_svd(ta_sum);
    const double sigma_bar =
        std::accumulate(f.sigma.begin(), f.sigma.end(), 0.0) / static_cast<double>(f.sigma.size());
    out.delta = sigma_bar * matmul_a_bt(f.u, f.v);
    out.meta.sigma_bar = sigma_bar;
    out.meta.k_common = f.sigma.size();
    return out;
}

// Iso-CTS for one layer: keep the top-k common directions, refill the
// remaining r - k slots with the strongest residual direction of each
// task, whiten the concatenation, and scale isotropically.
inline IsoLayer iso_cts_layer(std::span<const TaskMatrixSet> tasks, std::size_t layer,
                              const Matrix& ta_sum, double common_fraction) {
    const std::size_t num_tasks = tasks.size();
    IsoLayer out;
    if (ta_sum.is_zero()) {
        out = iso_c_layer(ta_sum);
        out.meta.method = MergeMethod::ISO_CTS;
        return out;
    }
    const std::size_t r = std::min(ta_sum.rows(), ta_sum.cols());
    const std::size_t k0 = std::min(round_half_away(common_fraction * static_cast<double>(r)), r);
    const std::size_t s = (r - k0) / num_tasks;
    const std::size_t k = r - num_tasks * s;  // remainder stays common
    if (s == 0) {
        out = iso_c_layer(ta_sum);
        out.meta.method = MergeMethod::ISO_CTS;
        return out;
    }

    const SvdFactors f = thin_svd(ta_sum);
    const Matrix uk = f.u.columns(0, k);
    const Matrix vk = f.v.columns(0, k);

    double sigma_total = std::accumulate(f.sigma.begin(), f.sigma.begin() + k, 0.0);
    Matrix u_star(ta_sum.rows(), r);
    Matrix v_star(ta_sum.cols(), r);
    for (std::size_t j = 0; j < k; ++j) {
        u_star.set_column(j, uk, j);
        v_star.set_column(j, vk, j);
    }
    std::size_t col = k;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        const Matrix& delta_t = tasks[t].matrices[layer].second;
        const Matrix resid = delta_t - matmul(uk, matmul_at_b(uk, delta_t));
        const SvdFactors rf = thin_svd(resid);
        for (std::size_t j = 0; j < s; ++j, ++col) {
            u_star.set_column(col, rf.u, j);
            v_star.set_column(col, rf.v, j);
            sigma_total += rf.sigma[j];
        }
    }

    Matrix u_white, v_white;
    try {
        u_white = whiten_columns(u_star);
        v_white = whiten_columns(v_star);
    } catch (const Error& e) {
        if (e.code() != errc::rank_deficient) throw;
        out = iso_c_layer(ta_sum);
        out.meta.method = MergeMethod::ISO_CTS;
        out.meta.iso_c_fallback = true;
        return out;
    }

    const double sigma_bar = sigma_total / static_cast<double>(r);
    out.delta = sigma_bar * matmul_a_bt(u_white, v_white);
    out.meta.method = MergeMethod::ISO_CTS;
    out.meta.r = r;
    out.meta.sigma_bar = sigma_bar;
    out.meta.k_common = k;
    out.meta.s_per_task = s;
    return out;
}

inline MergeOutcome assemble(std::span<const TaskMatrixSet> tasks, MergeMethod method,
                             std::vector<IsoLayer> layers) {
    MergeOutcome out;
    out.deltas.task_label = "merged:" + std::string(merge_method_name(method));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string& name = tasks.front().matrices[i].first;
        out.deltas.matrices.emplace_back(name, std::move(layers[i].delta));
        out.per_layer_meta.emplace_back(name, layers[i].meta);
    }
    for (std::size_t i = 0; i < tasks.front().vectors.size(); ++i)
        out.deltas.vectors.emplace_back(tasks.front().vectors[i].first, mean_vector(tasks, i));
    return out;
}

template <typename LayerFn>
inline MergeOutcome merge_isotropic(std::span<const TaskMatrixSet> tasks, MergeMethod method,
                                    int threads, LayerFn&& layer_fn) {
    check_aligned_tasks(tasks);
    std::vector<IsoLayer> layers(tasks.front().matrices.size());
    parallel_for(layers.size(), threads, [&](std::size_t i) {
        try {
            layers[i] = layer_fn(i);
        } catch (const Error& e) {
            throw Error(e.code(),
                        "layer '" + tasks.front().matrices[i].first + "': " + e.detail());
        }
    });
    return assemble(tasks, method, std::move(layers));
}

}  // namespace detail

// Elementwise mean of the task deltas.
inline MergeOutcome merge_average(std::span<const TaskMatrixSet> tasks) {
    detail::check_aligned_tasks(tasks);
    const double inv = 1.0 / static_cast<double>(tasks.size());
    std::vector<detail::IsoLayer> layers(tasks.front().matrices.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].delta = inv * detail::sum_layer(tasks, i);
        layers[i].meta.method = MergeMethod::AVG;
        layers[i].meta.r = std::min(layers[i].delta.rows(), layers[i].delta.cols());
    }
    return detail::assemble(tasks, MergeMethod::AVG, std::move(layers));
}

// Task Arithmetic: sum the task matrices; 1-D parameters are averaged.
inline MergeOutcome merge_task_arithmetic(std::span<const TaskMatrixSet> tasks) {
    detail::check_aligned_tasks(tasks);
    std::vector<detail::IsoLayer> layers(tasks.front().matrices.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].delta = detail::sum_layer(tasks, i);
        layers[i].meta.method = MergeMethod::TA;
        layers[i].meta.r = std::min(layers[i].delta.rows(), layers[i].delta.cols());
    }
    return detail::assemble(tasks, MergeMethod::TA, std::move(layers));
}

inline MergeOutcome merge_iso_c(std::span<const TaskMatrixSet> tasks, int threads = 1) {
    return detail::merge_isotropic(tasks, MergeMethod::ISO_C, threads, [&](std::size_t i) {
        return detail::iso_c_layer(detail::sum_layer(tasks, i));
    });
}

inline MergeOutcome merge_iso_cts(std::span<const TaskMatrixSet> tasks,
                                  double common_fraction = 0.8, int threads = 1) {
    if (!(common_fraction > 0.0) || common_fraction > 1.0)
        fail(errc::invalid_argument, "common_fraction must lie in (0, 1]");
    return detail::merge_isotropic(tasks, MergeMethod::ISO_CTS, threads, [&](std::size_t i) {
        return detail::iso_cts_layer(tasks, i, detail::sum_layer(tasks, i), common_fraction);
    });
}

// Isotropic scale over a combined spectrum: common singular values plus
// each task's retained residual values, divided by the full rank r.
inline double combined_sigma_bar(std::span<const double> sigma_common,
                                 std::span<const std::vector<double>> sigma_task_specific,
                                 std::size_t r) {
    double total = std::accumulate(sigma_common.begin(), sigma_common.end(), 0.0);
    for (const auto& ts : sigma_task_specific)
        total = std::accumulate(ts.begin(), ts.end(), total);
    return total / static_cast<double>(r);
}

// Per-task validation accuracies for one candidate model.
using AccuracyEvaluator = std::function<std::vector<double>(const TensorBundle&)>;

struct AlphaSweep {
    double best_alpha = 0.0;
    std::vector<std::pair<double, double>> table;  // (alpha, mean accuracy)
};

// Grid search for the delta scale: highest mean validation accuracy
// wins, ties broken toward the smaller alpha.
inline AlphaSweep sweep_alpha(const TensorBundle& base, const MergeOutcome& outcome,
                              std::span<const double> grid, const AccuracyEvaluator& evaluator) {
    if (grid.empty())
        fail(errc::empty_grid, "alpha grid is empty");
    AlphaSweep sweep;
    double best_score = -1.0;
    for (double alpha : grid) {
        const TensorBundle candidate = apply_delta(base, outcome, alpha);
        std::vector<double> accs;
        try {
            accs = evaluator(candidate);
        } catch (const std::exception& e) {
            fail(errc::evaluator_failure, std::string("evaluator threw: ") + e.what());
        }
        if (accs.empty())
            fail(errc::evaluator_failure, "evaluator returned no per-task accuracies");
        const double mean =
            std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
        sweep.table.emplace_back(alpha, mean);
        if (mean > best_score || (mean == best_score && alpha < sweep.best_alpha)) {
            best_score = mean;
            sweep.best_alpha = alpha;
        }
    }
    return sweep;
}

}  // namespace isomerge
