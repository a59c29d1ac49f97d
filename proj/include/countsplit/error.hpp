#ifndef COUNTSPLIT_ERROR_HPP
#define COUNTSPLIT_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

/**
 * @file error.hpp
 * @brief Error codes shared by every module.
 */

namespace countsplit {

enum class ErrorCode {
    io_error,
    parse_error,
    degenerate_cell,
    dimension_mismatch,
    invalid_epsilon,
    invalid_config,
    invalid_fraction,
    too_few_genes,
    not_converged,
    rank_deficient,
    separation_detected,
    theta_diverged,
    unconverged_fit,
    degenerate_matrix,
    too_few_points,
    constant_input,
    degenerate_clusters,
};

std::string_view to_string(ErrorCode code);

/**
 * Exception carrying an `ErrorCode` so that callers (notably the CLI) can map failures to exit codes.
 */
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}

#endif
