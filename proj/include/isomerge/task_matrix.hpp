#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "isomerge/errors.hpp"
#include "isomerge/matrix.hpp"
#include "isomerge/tensor.hpp"

namespace isomerge {

// Per-layer weight deltas for one task: 2-D parameters as matrices,
// 1-D parameters as plain vectors. Entry order mirrors the bundle the
// deltas were derived from.
struct TaskMatrixSet {
    std::vector<std::pair<std::string, Matrix>> matrices;
    std::vector<std::pair<std::string, std::vector<double>>> vectors;
    std::string task_label;

    const Matrix* find_matrix(const std::string& name) const {
        for (const auto& [n, m] : matrices)
            if (n == name) return &m;
        return nullptr;
    }

    const std::vector<double>* find_vector(const std::string& name) const {
        for (const auto& [n, v] : vectors)
            if (n == name) return &v;
        return nullptr;
    }
};

enum class MergeMethod { AVG, TA, ISO_C, ISO_CTS };

inline const char* merge_method_name(MergeMethod m) {
    switch (m) {
        case MergeMethod::AVG:     return "avg";
        case MergeMethod::TA:      return "ta";
        case MergeMethod::ISO_C:   return "iso-c";
        case MergeMethod::ISO_CTS: return "iso-cts";
    }
    return "?";
}

// Per-layer bookkeeping for a merged 2-D parameter.
struct LayerMeta {
    MergeMethod method = MergeMethod::TA;
    std::size_t r = 0;            // thin-SVD rank bound min(m, n)
    double sigma_bar = 0.0;       // isotropic scale (0 for AVG/TA)
    std::size_t k_common = 0;     // retained common directions
    std::size_t s_per_task = 0;   // retained task-specific directions per task
    bool zero_sum = false;        // sum of task matrices was exactly zero
    bool iso_c_fallback = false;  // whitening was rank-deficient, layer fell back
};

struct MergeOutcome {
    TaskMatrixSet deltas;
    std::vector<std::pair<std::string, LayerMeta>> per_layer_meta;

    const LayerMeta* find_meta(const std::string& name) const {
        for (const auto& [n, m] : per_layer_meta)
            if (n == name) return &m;
        return nullptr;
    }
};

namespace detail {

inline void check_same_parameters(const TensorBundle& a, const TensorBundle& b,
                                  const std::string& what) {
    if (a.size() != b.size())
        fail(errc::name_set_mismatch, what + ": bundles hold different parameter counts");
    for (const auto& [name, tensor] : a.entries()) {
        if (!b.contains(name))
            fail(errc::name_set_mismatch, what + ": parameter '" + name + "' missing");
        if (!same_shape(tensor, b.at(name)))
            fail(errc::shape_mismatch, what + ": parameter '" + name + "' shapes differ");
    }
}

}  // namespace detail

// theta_t - theta_0, elementwise in 64-bit, split by rank
inline TaskMatrixSet bundle_delta(const TensorBundle& fine_tuned, const TensorBundle& base,
                                  std::string task_label = {}) {
    detail::check_same_parameters(base, fine_tuned, "bundle_delta");
    TaskMatrixSet out;
    out.task_label = std::move(task_label);
    for (const auto& [name, base_tensor] : base.entries()) {
        const Tensor& ft = fine_tuned.at(name);
        if (base_tensor.is_matrix()) {
            Matrix d(static_cast<std::size_t>(base_tensor.shape()[0]),
                     static_cast<std::size_t>(base_tensor.shape()[1]));
            for (std::size_t i = 0; i < d.size(); ++i)
                d.data()[i] = static_cast<double>(ft.values()[i]) -
                              static_cast<double>(base_tensor.values()[i]);
            out.matrices.emplace_back(name, std::move(d));
        } else {
            std::vector<double> d(base_tensor.numel());
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] = static_cast<double>(ft.values()[i]) -
                       static_cast<double>(base_tensor.values()[i]);
            out.vectors.emplace_back(name, std::move(d));
        }
    }
    return out;
}

// theta_0 + alpha * delta, stored back as f32
inline TensorBundle apply_delta(const TensorBundle& base, const MergeOutcome& merged,
                                double alpha) {
    TensorBundle out;
    out.meta = base.meta;
    for (const auto& [name, base_tensor] : base.entries()) {
        std::vector<float> data(base_tensor.numel());
        if (base_tensor.is_matrix()) {
            const Matrix* d = merged.deltas.find_matrix(name);
            if (!d)
                fail(errc::name_set_mismatch, "apply_delta: no merged delta for '" + name + "'");
            if (d->rows() != static_cast<std::size_t>(base_tensor.shape()[0]) ||
                d->cols() != static_cast<std::size_t>(base_tensor.shape()[1]))
                fail(errc::shape_mismatch, "apply_delta: delta shape differs for '" + name + "'");
            for (std::size_t i = 0; i < data.size(); ++i)
                data[i] = static_cast<float>(
                    static_cast<double>(base_tensor.values()[i]) + alpha * d->data()[i]);
        } else {
            const std::vector<double>* d = merged.deltas.find_vector(name);
            if (!d)
                fail(errc::name_set_mismatch, "apply_delta: no merged delta for '" + name + "'");
            if (d->size() != base_tensor.numel())
                fail(errc::shape_mismatch, "apply_delta: delta shape differs for '" + name + "'");
            for (std::size_t i = 0; i < data.size(); ++i)
                data[i] = static_cast<float>(
                    static_cast<double>(base_tensor.values()[i]) + alpha * (*d)[i]);
        }
        out.add(name, Tensor(base_tensor.shape(), std::move(data)));
    }
    return out;
}

}  // namespace isomerge
