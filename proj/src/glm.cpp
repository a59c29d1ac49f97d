#include "countsplit/glm.hpp"

#include "countsplit/error.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace countsplit {

namespace {

constexpr double max_eta = 700.0;

Eigen::MatrixXd design_matrix(const RealMatrix& predictors, std::size_t n) {
    if (predictors.n_cols > 0 && predictors.n_rows != n) {
        throw Error(ErrorCode::dimension_mismatch,
            fmt::format("design has {} rows but response has {}", predictors.n_rows, n));
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(predictors.n_cols + 1));
    for (std::size_t i = 0; i < n; ++i) {
        x(static_cast<Eigen::Index>(i), 0) = 1.0;
        for (std::size_t j = 0; j < predictors.n_cols; ++j) {
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = predictors(i, j);
        }
    }
    return x;
}

void validate_inputs(std::span<const double> y, std::span<const double> offsets, const Eigen::MatrixXd& x) {
    const auto n = y.size();
    if (offsets.size() != n) {
        throw Error(ErrorCode::dimension_mismatch, fmt::format("{} offsets for {} observations", offsets.size(), n));
    }
    if (n <= static_cast<std::size_t>(x.cols())) {
        throw Error(ErrorCode::rank_deficient,
            fmt::format("{} observations cannot identify {} coefficients", n, x.cols()));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(y[i] >= 0) || !std::isfinite(y[i])) {
            throw Error(ErrorCode::invalid_config, fmt::format("response {} is negative or not finite", i));
        }
        if (!(offsets[i] > 0) || !std::isfinite(offsets[i])) {
            throw Error(ErrorCode::invalid_config, fmt::format("offset {} must be positive and finite", i));
        }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < x.cols()) {
        throw Error(ErrorCode::rank_deficient, "intercept and predictors are linearly dependent");
    }
}

// y * log(y / mu) with the 0 * log(0) = 0 convention.
double ylogy_over(double y, double mu) {
    return y > 0 ? y * std::log(y / mu) : 0.0;
}

double deviance(std::span<const double> y, const Eigen::VectorXd& mu, std::optional<double> theta) {
    double dev = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double m = mu(static_cast<Eigen::Index>(i));
        if (theta) {
            const double t = *theta;
            dev += ylogy_over(y[i], m) - (y[i] + t) * std::log((y[i] + t) / (m + t));
        } else {
            dev += ylogy_over(y[i], m) - (y[i] - m);
        }
    }
    return 2 * dev;
}

// Returns false if any linear predictor overflows.
bool compute_means(const Eigen::MatrixXd& x, const Eigen::VectorXd& log_offsets, const Eigen::VectorXd& beta, Eigen::VectorXd& mu) {
    Eigen::VectorXd eta = x * beta + log_offsets;
    if (!eta.allFinite() || eta.maxCoeff() > max_eta) {
        return false;
    }
    mu = eta.array().exp().matrix();
    return true;
}

Eigen::VectorXd working_weights(const Eigen::VectorXd& mu, std::optional<double> theta) {
    if (theta) {
        return (mu.array() / (1.0 + mu.array() / *theta)).matrix();
    }
    return mu;
}

struct IrlsOutcome {
    Eigen::VectorXd beta;
    Eigen::VectorXd mu;
    double deviance = 0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace;
};

IrlsOutcome run_irls(std::span<const double> y, const Eigen::MatrixXd& x, const Eigen::VectorXd& log_offsets,
    std::optional<double> theta, Eigen::VectorXd beta, const GlmOptions& options) {
    const auto n = static_cast<Eigen::Index>(y.size());
    Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);

    IrlsOutcome out;
    Eigen::VectorXd mu;
    if (!compute_means(x, log_offsets, beta, mu)) {
        throw Error(ErrorCode::separation_detected, "fitted means overflow at the starting values");
    }
    double dev = deviance(y, mu, theta);
    out.trace.push_back(dev);

    for (int iter = 1; iter <= options.max_iterations; ++iter) {
        out.iterations = iter;
        const Eigen::VectorXd w = working_weights(mu, theta);
        // Working response without the offset: eta - log(gamma) + (y - mu) / mu.
        const Eigen::VectorXd z = x * beta + ((yv - mu).array() / mu.array()).matrix();
        const Eigen::MatrixXd xtwx = x.transpose() * w.asDiagonal() * x;
        const Eigen::VectorXd xtwz = x.transpose() * (w.array() * z.array()).matrix();
        Eigen::LDLT<Eigen::MatrixXd> solver(xtwx);
        if (solver.info() != Eigen::Success) {
            throw Error(ErrorCode::rank_deficient, "weighted normal equations are singular");
        }
        Eigen::VectorXd candidate = solver.solve(xtwz);

        Eigen::VectorXd cand_mu;
        bool ok = candidate.allFinite() && compute_means(x, log_offsets, candidate, cand_mu);
        double cand_dev = ok ? deviance(y, cand_mu, theta) : std::numeric_limits<double>::infinity();
        // Deviance increases below its rounding error are not real increases.
        const double noise = 64 * std::numeric_limits<double>::epsilon() * (yv.array().abs().sum() + mu.sum());
        int halvings = 0;
        while ((!ok || !std::isfinite(cand_dev) || cand_dev > dev + noise) && halvings < options.max_halvings) {
            candidate = 0.5 * (candidate + beta);
            ok = candidate.allFinite() && compute_means(x, log_offsets, candidate, cand_mu);
            cand_dev = ok ? deviance(y, cand_mu, theta) : std::numeric_limits<double>::infinity();
            ++halvings;
        }
        if (!ok || !std::isfinite(cand_dev)) {
            throw Error(ErrorCode::separation_detected, "fitted means overflow during IRLS");
        }

        const double change = std::abs(cand_dev - dev) / (std::abs(cand_dev) + 0.1);
        const bool within_noise = std::abs(cand_dev - dev) <= noise;
        beta = std::move(candidate);
        mu = std::move(cand_mu);
        dev = cand_dev;
        out.trace.push_back(dev);
        if (change < options.tolerance || within_noise) {
            out.converged = true;
            break;
        }
    }

    out.beta = std::move(beta);
    out.mu = std::move(mu);
    out.deviance = dev;
    return out;
}

std::vector<double> standard_errors(const Eigen::MatrixXd& x, const Eigen::VectorXd& mu, std::optional<double> theta) {
    const Eigen::VectorXd w = working_weights(mu, theta);
    const Eigen::MatrixXd info = x.transpose() * w.asDiagonal() * x;
    const Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
    std::vector<double> se(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        se[static_cast<std::size_t>(k)] = std::sqrt(cov(k, k));
    }
    return se;
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd log_of(std::span<const double> offsets) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(offsets.size()));
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        out(static_cast<Eigen::Index>(i)) = std::log(offsets[i]);
    }
    return out;
}

Eigen::VectorXd starting_values(std::span<const double> y, std::span<const double> offsets, Eigen::Index n_coef) {
    double sum_y = 0, sum_g = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        sum_y += y[i];
        sum_g += offsets[i];
    }
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(n_coef);
    beta(0) = std::log((sum_y + 0.1) / sum_g);
    return beta;
}

bool all_zero(std::span<const double> y) {
    for (auto v : y) {
        if (v != 0) {
            return false;
        }
    }
    return true;
}

GlmFit unconverged_zero_fit(Family family, std::span<const double> y, std::span<const double> offsets, Eigen::Index n_coef) {
    GlmFit fit;
    fit.family = family;
    fit.coefficients = to_std(starting_values(y, offsets, n_coef));
    fit.standard_errors.assign(static_cast<std::size_t>(n_coef), std::numeric_limits<double>::quiet_NaN());
    fit.converged = false;
    return fit;
}

// psi(y + theta) - psi(theta), exact finite sum for small integer y.
double digamma_diff(double y, double theta) {
    if (y == std::floor(y) && y <= 200) {
        double s = 0;
        for (int k = 0; k < static_cast<int>(y); ++k) {
            s += 1.0 / (theta + k);
        }
        return s;
    }
    return boost::math::digamma(y + theta) - boost::math::digamma(theta);
}

// psi'(y + theta) - psi'(theta).
double trigamma_diff(double y, double theta) {
    if (y == std::floor(y) && y <= 200) {
        double s = 0;
        for (int k = 0; k < static_cast<int>(y); ++k) {
            const double d = theta + k;
            s -= 1.0 / (d * d);
        }
        return s;
    }
    return boost::math::trigamma(y + theta) - boost::math::trigamma(theta);
}

struct ThetaScore {
    double score;
    double derivative;
};

ThetaScore theta_score(std::span<const double> y, const Eigen::VectorXd& mu, double theta) {
    ThetaScore out{0, 0};
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double m = mu(static_cast<Eigen::Index>(i));
        const double tm = theta + m;
        out.score += digamma_diff(y[i], theta) - std::log1p(m / theta) + (m - y[i]) / tm;
        out.derivative += trigamma_diff(y[i], theta) + 1.0 / theta - 1.0 / tm - (m - y[i]) / (tm * tm);
    }
    return out;
}

struct ThetaEstimate {
    double theta;
    bool diverged;
};

// Profile MLE of theta for fixed means; safeguarded Newton on log(theta) inside a sign bracket.
ThetaEstimate estimate_theta(std::span<const double> y, const Eigen::VectorXd& mu, double cap) {
    double lo = std::log(1e-8);
    double hi = std::log(cap);
    if (theta_score(y, mu, cap).score >= 0) {
        return {cap, true};
    }
    if (theta_score(y, mu, std::exp(lo)).score <= 0) {
        return {std::exp(lo), false};
    }

    // Moment-style start, as in the usual glm.nb initialization.
    double denom = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double m = mu(static_cast<Eigen::Index>(i));
        const double r = y[i] / m - 1.0;
        denom += r * r;
    }
    double t = denom > 0 ? std::log(static_cast<double>(y.size()) / denom) : 0.5 * (lo + hi);
    if (!(t > lo && t < hi)) {
        t = 0.5 * (lo + hi);
    }

    for (int iter = 0; iter < 200; ++iter) {
        const double theta = std::exp(t);
        const auto s = theta_score(y, mu, theta);
        if (s.score > 0) {
            lo = t;
        } else {
            hi = t;
        }
        const double g = theta * s.score;
        const double h = theta * theta * s.derivative + g;
        double next = (h < 0) ? t - g / h : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) {
            next = 0.5 * (lo + hi);
        }
        if (std::abs(next - t) < 1e-12 || hi - lo < 1e-12) {
            t = next;
            break;
        }
        t = next;
    }
    return {std::exp(t), false};
}

GlmFit finish_fit(Family family, const Eigen::MatrixXd& x, const IrlsOutcome& irls, std::optional<double> theta) {
    GlmFit fit;
    fit.family = family;
    fit.coefficients = to_std(irls.beta);
    fit.standard_errors = standard_errors(x, irls.mu, theta);
    fit.dispersion = theta;
    fit.deviance = irls.deviance;
    fit.iterations = irls.iterations;
    fit.converged = irls.converged;
    fit.fitted = to_std(irls.mu);
    fit.deviance_trace = irls.trace;
    return fit;
}

}

RealMatrix single_predictor(std::span<const double> predictor) {
    RealMatrix out(predictor.size(), 1);
    std::copy(predictor.begin(), predictor.end(), out.values.begin());
    return out;
}

GlmFit fit_poisson_glm(std::span<const double> response, const RealMatrix& predictors, std::span<const double> offsets,
    const GlmOptions& options) {
    const Eigen::MatrixXd x = design_matrix(predictors, response.size());
    validate_inputs(response, offsets, x);
    if (all_zero(response)) {
        return unconverged_zero_fit(Family::poisson, response, offsets, x.cols());
    }
    const Eigen::VectorXd log_offsets = log_of(offsets);
    auto irls = run_irls(response, x, log_offsets, std::nullopt, starting_values(response, offsets, x.cols()), options);
    return finish_fit(Family::poisson, x, irls, std::nullopt);
}

GlmFit fit_negbin_glm(std::span<const double> response, const RealMatrix& predictors, std::span<const double> offsets,
    const GlmOptions& options) {
    const Eigen::MatrixXd x = design_matrix(predictors, response.size());
    validate_inputs(response, offsets, x);
    if (all_zero(response)) {
        return unconverged_zero_fit(Family::negative_binomial, response, offsets, x.cols());
    }
    const Eigen::VectorXd log_offsets = log_of(offsets);

    auto irls = run_irls(response, x, log_offsets, std::nullopt, starting_values(response, offsets, x.cols()), options);
    auto theta = estimate_theta(response, irls.mu, options.theta_cap);
    bool outer_converged = false;
    int total_iterations = irls.iterations;
    std::vector<double> trace;

    for (int outer = 0; outer < options.max_outer_iterations; ++outer) {
        const double old_dev = irls.deviance;
        const double old_theta = theta.theta;
        irls = run_irls(response, x, log_offsets, theta.theta, irls.beta, options);
        total_iterations += irls.iterations;
        trace.insert(trace.end(), irls.trace.begin(), irls.trace.end());
        if (theta.diverged) {
            outer_converged = irls.converged;
            break;
        }
        theta = estimate_theta(response, irls.mu, options.theta_cap);
        if (theta.diverged) {
            continue;
        }
        const double dev_change = std::abs(irls.deviance - old_dev) / (std::abs(irls.deviance) + 0.1);
        const double theta_change = std::abs(theta.theta - old_theta) / old_theta;
        if (outer > 0 && irls.converged && dev_change < options.tolerance && theta_change < 1e-6) {
            outer_converged = true;
            break;
        }
    }

    auto fit = finish_fit(Family::negative_binomial, x, irls, theta.theta);
    fit.theta_diverged = theta.diverged;
    fit.converged = outer_converged;
    fit.iterations = total_iterations;
    fit.deviance_trace = std::move(trace);
    return fit;
}

GlmFit fit_glm(Family family, std::span<const double> response, const RealMatrix& predictors, std::span<const double> offsets,
    const GlmOptions& options) {
    return family == Family::poisson ? fit_poisson_glm(response, predictors, offsets, options)
                                     : fit_negbin_glm(response, predictors, offsets, options);
}

std::vector<double> predict(const GlmFit& fit, const RealMatrix& predictors, std::span<const double> offsets) {
    const Eigen::MatrixXd x = design_matrix(predictors, offsets.size());
    if (static_cast<std::size_t>(x.cols()) != fit.coefficients.size()) {
        throw Error(ErrorCode::dimension_mismatch, "design does not match the fitted coefficients");
    }
    Eigen::Map<const Eigen::VectorXd> beta(fit.coefficients.data(), x.cols());
    Eigen::VectorXd eta = x * beta + log_of(offsets);
    return to_std(eta.array().exp().matrix());
}

double log_likelihood(Family family, std::span<const double> response, std::span<const double> means, std::optional<double> theta) {
    double ll = 0;
    for (std::size_t i = 0; i < response.size(); ++i) {
        const double y = response[i];
        const double m = means[i];
        if (family == Family::poisson || !theta) {
            ll += (y > 0 ? y * std::log(m) : 0.0) - m - std::lgamma(y + 1);
        } else {
            const double t = *theta;
            ll += std::lgamma(y + t) - std::lgamma(t) - std::lgamma(y + 1) + t * std::log(t / (t + m))
                + (y > 0 ? y * std::log(m / (t + m)) : 0.0);
        }
    }
    return ll;
}

double normal_two_sided_p(double z) {
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

double normal_quantile(double prob) {
    return boost::math::quantile(boost::math::normal_distribution<double>(), prob);
}

WaldResult wald_test(const GlmFit& fit, std::size_t index) {
    if (!fit.converged) {
        throw Error(ErrorCode::unconverged_fit, "Wald test requires a converged fit");
    }
    if (index >= fit.coefficients.size()) {
        throw Error(ErrorCode::invalid_config, fmt::format("coefficient index {} out of range", index));
    }
    WaldResult out;
    out.estimate = fit.coefficients[index];
    out.std_error = fit.standard_errors[index];
    out.z_value = out.estimate / out.std_error;
    out.p_value = normal_two_sided_p(out.z_value);
    return out;
}

ConfidenceInterval wald_ci(const GlmFit& fit, std::size_t index, double level) {
    if (!fit.converged) {
        throw Error(ErrorCode::unconverged_fit, "confidence interval requires a converged fit");
    }
    if (!(level > 0 && level < 1)) {
        throw Error(ErrorCode::invalid_config, fmt::format("level must lie in (0, 1), got {}", level));
    }
    if (index >= fit.coefficients.size()) {
        throw Error(ErrorCode::invalid_config, fmt::format("coefficient index {} out of range", index));
    }
    const double half = normal_quantile(0.5 * (1 + level)) * fit.standard_errors[index];
    return {fit.coefficients[index] - half, fit.coefficients[index] + half, level};
}

std::vector<double> target_parameter(std::span<const double> expected_counts, const RealMatrix& predictors,
    const SizeFactors& size_factors) {
    for (auto v : expected_counts) {
        if (!(v > 0) || !std::isfinite(v)) {
            throw Error(ErrorCode::invalid_config, "expected counts must be positive and finite");
        }
    }
    GlmOptions options;
    options.tolerance = 1e-12;
    options.max_iterations = 100;
    auto fit = fit_poisson_glm(expected_counts, predictors, size_factors.gamma, options);
    if (!fit.converged) {
        throw Error(ErrorCode::not_converged, "target parameter fit did not converge");
    }
    return fit.coefficients;
}

}
