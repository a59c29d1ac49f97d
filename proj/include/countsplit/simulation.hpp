#ifndef COUNTSPLIT_SIMULATION_HPP
#define COUNTSPLIT_SIMULATION_HPP

#include "countsplit/count_matrix.hpp"
#include "countsplit/latent.hpp"
#include "countsplit/pipelines.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace countsplit {

enum class LatentModel { none, trajectory, clusters };

enum class SizeFactorModel { unit, gamma_10_10 };

struct ScenarioConfig {
    std::string name = "scenario";
    std::size_t n = 200;
    std::size_t p = 10;
    LatentModel latent = LatentModel::none;
    /// Log-intercept per gene.
    std::vector<double> beta0;
    /// Slope per gene; 0 for null genes.
    std::vector<double> beta1;
    /// Gamma mixing shape `b`; unset means Poisson counts.
    std::optional<double> overdispersion_b;
    SizeFactorModel size_factors = SizeFactorModel::unit;
    std::uint64_t seed = 0;
    /// Draw the latent variable from this seed instead of `seed`, so it stays fixed across replicates.
    std::optional<std::uint64_t> latent_seed;
    /// Optional gene group label per gene, used to break calibration summaries down.
    std::vector<std::string> gene_groups;

    /**
     * @throws Error `invalid_config` on inconsistent lengths or out-of-range values.
     */
    void validate() const;
};

struct SimulatedData {
    CountMatrix counts;
    SizeFactors size_factors;
    /// Unset for `LatentModel::none`.
    std::optional<LatentEstimate> latent;
    /// `gamma_i * Lambda_ij`, row-major n x p.
    RealMatrix expected;
};

/**
 * Draw counts from `gamma_i * exp(beta0_j + beta1_j * L_i)`, Poisson or Gamma-Poisson.
 * The trajectory latent is a centered vector of standard normals; clusters are Bernoulli(0.5) labels.
 */
SimulatedData generate(const ScenarioConfig& config);

struct QqPoint {
    double theoretical = 0;
    double empirical = 0;
};

struct CalibrationSummary {
    std::string group = "all";
    double ks_distance = 0;
    /// Pairs of (level, rejection rate) for levels 0.01, 0.05 and 0.1.
    std::vector<std::pair<double, double>> rejection_rates;
    std::vector<QqPoint> qq_points;
    std::size_t n_pvalues = 0;
    std::size_t n_missing = 0;

    double rejection_rate(double level) const;
};

/**
 * Kolmogorov-Smirnov distance between the empirical distribution of `values` and Unif(0, 1).
 */
double ks_distance_uniform(std::span<const double> values);

/**
 * Summarize p-values; `missing` counts failed fits excluded from `pvalues`.
 */
CalibrationSummary summarize_pvalues(std::vector<double> pvalues, std::size_t missing, std::string group,
    std::size_t max_qq_points = 200);

struct CalibrationResult {
    std::string scenario;
    MethodConfig method;
    std::size_t replicates = 0;
    CalibrationSummary overall;
    /// One summary per distinct gene group label, in order of first appearance.
    std::vector<CalibrationSummary> groups;
    /// Raw pooled p-values per gene, NaN for failed fits; replicate-major.
    std::vector<double> pvalues;
};

struct RunOptions {
    int threads = 1;
    /// Size factors handed to the pipeline; `known` passes the simulated truth.
    GammaPolicy gamma = GammaPolicy::known;
};

/**
 * Run `method` on `replicates` datasets and summarize the pooled p-values.
 * Cluster mean tests contribute one p-value per replicate.
 * @throws Error `invalid_config` if `replicates` is zero.
 */
CalibrationResult run_calibration(const ScenarioConfig& scenario, const MethodConfig& method, std::size_t replicates,
    const RunOptions& options = {});

struct SweepPoint {
    double b = 0;
    /// `Lambda / b` for the first gene's baseline mean.
    double mean_over_b = 0;
    CalibrationResult calibration;
};

std::vector<SweepPoint> run_overdispersion_sweep(std::span<const double> b_values, const ScenarioConfig& base,
    const MethodConfig& method, std::size_t replicates, const RunOptions& options = {});

struct PowerCoverageConfig {
    ScenarioConfig scenario;
    std::vector<double> epsilons{0.2, 0.5, 0.8};
    /// Non-null genes (non-zero `beta1` in the scenario) use `slope_values[r % size]` in replicate r.
    std::vector<double> slope_values;
    std::size_t replicates = 200;
    Estimator estimator = Estimator::pc1_trajectory;
    double level = 0.05;
    std::uint64_t seed = 0;
};

struct GeneOutcome {
    std::size_t replicate = 0;
    std::size_t epsilon_index = 0;
    std::size_t gene = 0;
    /// Index into `PowerCoverageResult::group_names`.
    std::size_t group = 0;
    double beta0 = 0;
    double beta1 = 0;
    double target = 0;
    bool converged = false;
    /// Defined only when converged.
    bool rejected = false;
    bool ci_covers_target = false;
    double p_value = 0;
};

struct ReplicateQuality {
    std::size_t replicate = 0;
    std::size_t epsilon_index = 0;
    /// Absolute correlation (trajectory) or adjusted Rand index (clusters) between true and estimated latent.
    double quality = 0;
};

struct PowerCoverageResult {
    std::string scenario;
    std::vector<double> epsilons;
    /// Distinct scenario gene groups in order of first appearance; a single "all" group if none are set.
    std::vector<std::string> group_names;
    std::vector<GeneOutcome> genes;
    std::vector<ReplicateQuality> quality;
    std::size_t unconverged = 0;
};

/**
 * Count-split every replicate at each epsilon, recording per-gene target parameter, rejection and CI coverage.
 * The same dataset is reused across epsilons within a replicate.
 */
PowerCoverageResult run_power_coverage(const PowerCoverageConfig& config, const RunOptions& options = {});

struct PowerBin {
    std::size_t epsilon_index = 0;
    double lower = 0;
    double upper = 0;
    std::size_t count = 0;
    double rejection_rate = 0;
};

/**
 * Rejection rate of converged non-null genes binned by `|target|` on `edges`, per epsilon.
 * `group` restricts to one gene group; empty bins are omitted.
 */
std::vector<PowerBin> binned_power(const PowerCoverageResult& result, std::span<const double> edges,
    std::optional<std::size_t> group = std::nullopt);

struct OverdispersionProfile {
    /// Estimated `b` per gene, NaN for failed fits; diverged fits report the cap.
    std::vector<double> b_hat;
    /// Fitted means, row-major n x p, NaN for failed genes.
    RealMatrix fitted;
    /// Histogram of fitted mean over `b_hat` across all converged entries.
    std::vector<double> bin_edges;
    std::vector<std::size_t> bin_counts;
    double fraction_below_one = 0;
    std::size_t failed_genes = 0;
};

/**
 * Fit a negative binomial GLM per gene on `latent` (intercept-only when unset) and profile `mean / b`.
 */
OverdispersionProfile estimate_overdispersion_profile(const CountMatrix& matrix, const SizeFactors& size_factors,
    const std::optional<LatentEstimate>& latent, std::span<const double> bin_edges);

/**
 * Scenario with `n` cells, `p/2` genes at mean 1 and the rest at mean 10, no latent signal.
 */
ScenarioConfig null_two_level_scenario(std::size_t n = 200, std::size_t p = 10, std::uint64_t seed = 0);

/**
 * Scenario with every entry drawn with mean `lambda`, optionally Gamma-mixed with shape `b`.
 */
ScenarioConfig constant_mean_scenario(double lambda, std::optional<double> b, std::size_t n = 200, std::size_t p = 10,
    std::uint64_t seed = 0);

enum class InterceptMix { mixed, low, high };

/**
 * Latent-signal scenario: intercepts log 3 / log 25, `non_null_fraction` of genes with a placeholder slope of 1,
 * Gamma(10, 10) size factors.
 */
ScenarioConfig signal_scenario(LatentModel latent, std::size_t n, std::size_t p, double non_null_fraction,
    InterceptMix mix, std::uint64_t seed);

/**
 * `count` equally spaced values from `lo` to `hi`.
 */
std::vector<double> linspace(double lo, double hi, std::size_t count);

std::string_view to_string(LatentModel model);
std::string_view to_string(SizeFactorModel model);
LatentModel parse_latent_model(std::string_view name);
SizeFactorModel parse_size_factor_model(std::string_view name);

inline constexpr int summary_schema_version = 1;

/**
 * Long-format rows: scenario, method, epsilon, group, metric, value.
 */
struct SummaryRow {
    std::string scenario;
    std::string method;
    double epsilon = 0;
    std::string group;
    std::string metric;
    double value = 0;
};

std::vector<SummaryRow> summary_rows(const CalibrationResult& result, std::string_view method_label);
std::vector<SummaryRow> summary_rows(const PowerCoverageResult& result);

/**
 * QQ data rows: scenario, method, group, theoretical, empirical.
 */
std::string format_qq_csv(const std::vector<std::pair<std::string, const CalibrationResult*>>& results);

std::string format_summary_csv(std::span<const SummaryRow> rows);
std::vector<SummaryRow> parse_summary_csv(const std::string& text);

}

#endif
