#ifndef COUNTSPLIT_GLM_HPP
#define COUNTSPLIT_GLM_HPP

#include "countsplit/count_matrix.hpp"

#include <optional>
#include <span>
#include <vector>

/**
 * @file glm.hpp
 * @brief Log-link Poisson and negative binomial regression by IRLS, with Wald tests and intervals.
 *
 * All fits take the size factors as multiplicative offsets, i.e. the mean is `gamma_i * exp(b0 + b^T z_i)`.
 */

namespace countsplit {

enum class Family { poisson, negative_binomial };

struct GlmOptions {
    /// IRLS stops when `|dev - dev_old| / (|dev| + 0.1)` falls below this.
    double tolerance = 1e-8;
    int max_iterations = 25;
    /// Step-halving attempts per iteration when the deviance increases.
    int max_halvings = 30;
    /// Negative binomial only: alternations between coefficient and dispersion updates.
    int max_outer_iterations = 25;
    /// Negative binomial only: dispersion estimates at or beyond this are reported as diverged.
    double theta_cap = 1e6;
};

struct GlmFit {
    Family family = Family::poisson;
    /// Intercept first, then one slope per predictor column.
    std::vector<double> coefficients;
    std::vector<double> standard_errors;
    /// Negative binomial size parameter theta, with variance `mu + mu^2 / theta`.
    std::optional<double> dispersion;
    /// Set when the dispersion MLE lies at or beyond `GlmOptions::theta_cap`; the fit is then effectively Poisson.
    bool theta_diverged = false;
    double deviance = 0;
    int iterations = 0;
    bool converged = false;
    /// Fitted means at the final coefficients.
    std::vector<double> fitted;
    /// Deviance after each accepted IRLS update, starting with the deviance at the initial values.
    std::vector<double> deviance_trace;
};

struct WaldResult {
    double estimate = 0;
    double std_error = 0;
    double z_value = 0;
    double p_value = 1;
};

struct ConfidenceInterval {
    double lower = 0;
    double upper = 0;
    double level = 0.95;
};

/**
 * Fit a Poisson GLM of `response` on the columns of `predictors` (n x k, may have k = 0) with an intercept.
 * Non-integer responses are allowed, which is what `target_parameter()` relies on.
 *
 * Throws `rank_deficient` if the intercept and predictors are collinear, and `separation_detected` if fitted means overflow.
 * An all-zero response has no finite MLE and is returned with `converged = false`.
 */
GlmFit fit_poisson_glm(std::span<const double> response, const RealMatrix& predictors, std::span<const double> offsets,
    const GlmOptions& options = {});

/**
 * Negative binomial GLM with the dispersion estimated by maximum likelihood, alternating with IRLS for the coefficients.
 * If the dispersion MLE exceeds `options.theta_cap`, the fit is returned at the cap with `theta_diverged` set.
 */
GlmFit fit_negbin_glm(std::span<const double> response, const RealMatrix& predictors, std::span<const double> offsets,
    const GlmOptions& options = {});

/**
 * Dispatch on `family`.
 */
GlmFit fit_glm(Family family, std::span<const double> response, const RealMatrix& predictors, std::span<const double> offsets,
    const GlmOptions& options = {});

/**
 * Single-predictor convenience: wraps `predictor` as an n x 1 design.
 */
RealMatrix single_predictor(std::span<const double> predictor);

/**
 * Fitted means `gamma_i * exp(b0 + b^T z_i)` for a new design.
 */
std::vector<double> predict(const GlmFit& fit, const RealMatrix& predictors, std::span<const double> offsets);

/**
 * Log-likelihood of `response` under the fitted means (Poisson, or negative binomial with the fitted dispersion).
 */
double log_likelihood(Family family, std::span<const double> response, std::span<const double> means,
    std::optional<double> theta = std::nullopt);

/**
 * Two-sided normal-reference test of coefficient `index` against zero.
 * Throws `unconverged_fit` if the fit did not converge.
 */
WaldResult wald_test(const GlmFit& fit, std::size_t index);

/**
 * `estimate -/+ z_{(1 + level)/2} * SE`.
 */
ConfidenceInterval wald_ci(const GlmFit& fit, std::size_t index, double level);

/**
 * Population coefficients targeted by a Poisson GLM of gene `j` on `predictors`: the fit to the expected counts themselves.
 * `expected_counts` must already include the size factors.
 */
std::vector<double> target_parameter(std::span<const double> expected_counts, const RealMatrix& predictors,
    const SizeFactors& size_factors);

/**
 * Standard normal upper-tail helpers, exposed for the calibration code.
 */
double normal_two_sided_p(double z);
double normal_quantile(double prob);

}

#endif
