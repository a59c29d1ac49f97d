#include "countsplit/error.hpp"

namespace countsplit {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::io_error: return "io_error";
        case ErrorCode::parse_error: return "parse_error";
        case ErrorCode::degenerate_cell: return "degenerate_cell";
        case ErrorCode::dimension_mismatch: return "dimension_mismatch";
        case ErrorCode::invalid_epsilon: return "invalid_epsilon";
        case ErrorCode::invalid_config: return "invalid_config";
        case ErrorCode::invalid_fraction: return "invalid_fraction";
        case ErrorCode::too_few_genes: return "too_few_genes";
        case ErrorCode::not_converged: return "not_converged";
        case ErrorCode::rank_deficient: return "rank_deficient";
        case ErrorCode::separation_detected: return "separation_detected";
        case ErrorCode::theta_diverged: return "theta_diverged";
        case ErrorCode::unconverged_fit: return "unconverged_fit";
        case ErrorCode::degenerate_matrix: return "degenerate_matrix";
        case ErrorCode::too_few_points: return "too_few_points";
        case ErrorCode::constant_input: return "constant_input";
        case ErrorCode::degenerate_clusters: return "degenerate_clusters";
    }
    return "unknown_error";
}

}
