#pragma once

#include <stdexcept>
#include <string>

namespace isomerge {

// Every failure mode the library reports, grouped by how the CLI maps
// them to exit codes: input/format problems vs numerical degeneracies.
enum class errc {
    // input / format / usage
    magic_mismatch,
    version_unsupported,
    header_malformed,
    payload_truncated,
    io_failure,
    non_finite_value,   // rejected at ingest
    duplicate_name,
    shape_mismatch,
    name_set_mismatch,
    dimension_mismatch,
    k_out_of_range,
    empty_task_list,
    empty_grid,
    empty_split,
    invalid_dims,
    length_mismatch,
    too_large,
    invalid_argument,
    no_two_d_layers,

    // numerical
    non_finite,
    no_convergence,
    zero_matrix,
    zero_source,
    zero_vector,
    zero_variance,
    rank_deficient,
    basis_not_orthonormal,
    degenerate_denominator,
    evaluator_failure,
};

inline const char* errc_name(errc c) {
    switch (c) {
        case errc::magic_mismatch:          return "MagicMismatch";
        case errc::version_unsupported:     return "VersionUnsupported";
        case errc::header_malformed:        return "HeaderMalformed";
        case errc::payload_truncated:       return "PayloadTruncated";
        case errc::io_failure:              return "IoFailure";
        case errc::non_finite_value:        return "NonFiniteValue";
        case errc::duplicate_name:          return "DuplicateName";
        case errc::shape_mismatch:          return "ShapeMismatch";
        case errc::name_set_mismatch:       return "NameSetMismatch";
        case errc::dimension_mismatch:      return "DimensionMismatch";
        case errc::k_out_of_range:          return "KOutOfRange";
        case errc::empty_task_list:         return "EmptyTaskList";
        case errc::empty_grid:              return "EmptyGrid";
        case errc::empty_split:             return "EmptySplit";
        case errc::invalid_dims:            return "InvalidDims";
        case errc::length_mismatch:         return "LengthMismatch";
        case errc::too_large:               return "TooLarge";
        case errc::invalid_argument:        return "InvalidArgument";
        case errc::no_two_d_layers:         return "NoTwoDLayers";
        case errc::non_finite:              return "NonFinite";
        case errc::no_convergence:          return "NoConvergence";
        case errc::zero_matrix:             return "ZeroMatrix";
        case errc::zero_source:             return "ZeroSource";
        case errc::zero_vector:             return "ZeroVector";
        case errc::zero_variance:           return "ZeroVariance";
        case errc::rank_deficient:          return "RankDeficient";
        case errc::basis_not_orthonormal:   return "BasisNotOrthonormal";
        case errc::degenerate_denominator:  return "DegenerateDenominator";
        case errc::evaluator_failure:       return "EvaluatorFailure";
    }
    return "UnknownError";
}

// true for degeneracies discovered while computing, false for bad inputs
inline bool is_numerical(errc c) {
    switch (c) {
        case errc::non_finite:
        case errc::no_convergence:
        case errc::zero_matrix:
        case errc::zero_source:
        case errc::zero_vector:
        case errc::zero_variance:
        case errc::rank_deficient:
        case errc::basis_not_orthonormal:
        case errc::degenerate_denominator:
        case errc::evaluator_failure:
            return true;
        default:
            return false;
    }
}

class Error : public std::runtime_error {
public:
    Error(errc code, const std::string& detail)
        : std::runtime_error(std::string(errc_name(code)) + ": " + detail),
          code_(code),
          detail_(detail) {}

    errc code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    errc code_;
    std::string detail_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) {
    throw Error(code, what);
}

}  // namespace isomerge
