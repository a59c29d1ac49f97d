#ifndef COUNTSPLIT_PIPELINES_HPP
#define COUNTSPLIT_PIPELINES_HPP

#include "countsplit/count_matrix.hpp"
#include "countsplit/glm.hpp"
#include "countsplit/latent.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace countsplit {

enum class Method {
    count_split,
    double_dip,
    test_double_dip,
    cell_split,
    gene_split,
    jackstraw_full,
    jackstraw_efficient,
    pseudotime_de,
    cluster_mean_naive,
    cluster_mean_countsplit
};

enum class Estimator { pc1_trajectory, kmeans2 };

/**
 * How per-cell size factors are obtained for normalization and GLM offsets.
 *
 * - `known`: use the supplied factors (subset to the rows in use).
 * - `unit`: all ones.
 * - `per_matrix`: re-estimate from whichever matrix is being normalized or tested.
 * - `train`: like `per_matrix`, except test-set offsets are estimated from the training matrix.
 */
enum class GammaPolicy { known, unit, per_matrix, train };

struct SizeFactorPolicy {
    GammaPolicy policy = GammaPolicy::per_matrix;
    /// Required when `policy` is `known`.
    std::optional<SizeFactors> known;

    static SizeFactorPolicy unit() { return {GammaPolicy::unit, std::nullopt}; }
    static SizeFactorPolicy per_matrix() { return {GammaPolicy::per_matrix, std::nullopt}; }
    static SizeFactorPolicy train() { return {GammaPolicy::train, std::nullopt}; }
    static SizeFactorPolicy from_known(SizeFactors factors) { return {GammaPolicy::known, std::move(factors)}; }
};

struct MethodConfig {
    Method method = Method::count_split;
    Estimator estimator = Estimator::pc1_trajectory;
    Family family = Family::poisson;
    /// Count splitting train fraction.
    double epsilon = 0.5;
    /// Fraction of cells used for training (cell splitting) or per subsample (PseudotimeDE).
    double fraction = 0.5;
    /// Resamples for jackstraw and PseudotimeDE.
    int resamples = 100;
    /// Genes permuted per resample in efficient jackstraw.
    int permuted_genes = 10;
    std::uint64_t seed = 0;
    /// Report resampling p-values as `(1 + hits) / (1 + total)` instead of `hits / total`.
    bool plus_one = false;
    double ci_level = 0.95;
    double pseudocount = 1.0;
    /// Worker threads for per-gene and per-resample work.
    int threads = 1;
    GlmOptions glm;

    /**
     * Defaults for `method`, with `fraction = 0.8` for PseudotimeDE.
     */
    static MethodConfig for_method(Method method);

    /**
     * @throws Error `invalid_epsilon`, `invalid_fraction` or `invalid_config` for out-of-range parameters.
     */
    void validate() const;
};

enum class GeneStatus { ok, unconverged, skipped };

struct GeneResult {
    std::size_t gene_index = 0;
    std::optional<double> estimate;
    std::optional<double> std_error;
    /// Present iff `status` is `ok`.
    std::optional<double> p_value;
    std::optional<double> ci_lower;
    std::optional<double> ci_upper;
    GeneStatus status = GeneStatus::skipped;
    /// Gene splitting: index of the latent estimate the gene was tested against; otherwise 0.
    int latent_group = 0;
    /// Resampling methods: number of reference statistics behind the p-value.
    std::size_t reference_size = 0;
};

struct DeReport {
    MethodConfig config;
    GammaPolicy gamma_policy = GammaPolicy::per_matrix;
    /// Latent estimate used for testing, one entry per row in `latent_rows`.
    LatentEstimate latent;
    /// Rows of the input that `latent` refers to.
    std::vector<std::size_t> latent_rows;
    /// Gene splitting: estimate from the second gene half.
    std::optional<LatentEstimate> secondary_latent;
    std::vector<GeneResult> results;
    /// Resampled fits that failed and were left out of reference distributions.
    std::size_t dropped_fits = 0;

    std::size_t count(GeneStatus status) const;
};

DeReport de_count_split(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config);
DeReport de_double_dip(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config);

/**
 * Count split, then estimate the latent variable and test genes both on the test matrix.
 */
DeReport de_test_double_dip(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config);

/**
 * Latent axis from training cells; test cells are projected with training column means (PC1) or assigned to the nearest training centroid (k-means).
 * Genes are tested on test cells only.
 */
DeReport de_cell_split(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config);

/**
 * Each gene half yields a latent estimate; genes in one half are tested against the other half's estimate.
 * Both halves are normalized with the size factors of the full matrix, which also serve as offsets.
 * `GeneResult::latent_group` is 0 for genes tested against `latent` and 1 for `secondary_latent`.
 */
DeReport de_gene_split(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config);

/**
 * Permutation p-values with statistic `|z|`; `config.method` selects the full or efficient variant.
 */
DeReport jackstraw(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config);

/**
 * Subsample-and-permute p-values with statistic `|beta_1|`.
 */
DeReport pseudotime_de(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config);

/**
 * Dispatch on `config.method` for all per-gene methods.
 */
DeReport run_de(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config);

/**
 * Estimate the latent variable from a normalized matrix.
 */
LatentEstimate estimate_latent(const RealMatrix& normalized, Estimator estimator, std::uint64_t seed);

struct ClusterMeanTest {
    /// Euclidean norm of the difference of cluster mean vectors.
    double difference_norm = 0;
    /// Pooled standard deviation of all centered transformed entries.
    double sigma = 0;
    /// `difference_norm / (sigma * sqrt(1/n1 + 1/n2))`.
    double statistic = 0;
    /// Upper tail of the chi distribution with `n_genes` degrees of freedom.
    double p_value = 1;
    std::size_t cluster_sizes[2] = {0, 0};
    std::vector<int> labels;
};

/**
 * Average-linkage hierarchical clustering on Euclidean distances, cut into two clusters.
 * Labels are 0/1 in order of first appearance.
 * @throws Error `too_few_points` if fewer than 2 rows.
 */
std::vector<int> average_linkage_two_clusters(const RealMatrix& rows);

/**
 * Test equality of the two cluster mean vectors of `log(X + 1)`.
 * `config.method` selects `cluster_mean_naive` (cluster and test on X) or `cluster_mean_countsplit`.
 * @throws Error `too_few_points` if n < 4, `degenerate_clusters` if the pooled variance is zero.
 */
ClusterMeanTest cluster_mean_test(const CountMatrix& matrix, const MethodConfig& config);

std::string_view to_string(Method method);
std::string_view to_string(Estimator estimator);
std::string_view to_string(GammaPolicy policy);
std::string_view to_string(GeneStatus status);
std::string_view to_string(Family family);

/**
 * Parse a method name; accepts the enum spelling and the compact forms `countsplit`, `doubledip`, `cellsplit`, `genesplit`.
 * @throws Error `invalid_config` listing valid names.
 */
Method parse_method(std::string_view name);
Estimator parse_estimator(std::string_view name);
GammaPolicy parse_gamma_policy(std::string_view name);
Family parse_family(std::string_view name);

inline constexpr int de_report_schema_version = 1;

/**
 * Per-gene CSV: `gene` is the 0-based column index and `name` the gene name, empty when `gene_names` is unset.
 * Missing values are written as NA.
 */
std::string format_de_report_csv(const DeReport& report,
    const std::optional<std::vector<std::string>>& gene_names = std::nullopt);
std::string format_de_report_json(const DeReport& report);

}

#endif
