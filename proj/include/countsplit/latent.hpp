#ifndef COUNTSPLIT_LATENT_HPP
#define COUNTSPLIT_LATENT_HPP

#include "countsplit/count_matrix.hpp"
#include "countsplit/rng.hpp"

#include <cstdint>
#include <span>
#include <vector>

/**
 * @file latent.hpp
 * @brief Latent variable estimators (first principal component, k-means) and agreement metrics.
 */

namespace countsplit {

enum class LatentKind { trajectory, clusters };

/**
 * Either a per-cell continuous score (trajectory) or per-cell cluster labels in `0..k-1`.
 */
struct LatentEstimate {
    LatentKind kind = LatentKind::trajectory;
    std::vector<double> scores;
    std::vector<int> labels;
    int k = 0;

    static LatentEstimate trajectory(std::vector<double> scores);
    static LatentEstimate clusters(std::vector<int> labels, int k);

    std::size_t size() const { return kind == LatentKind::trajectory ? scores.size() : labels.size(); }

    /**
     * The regressor used downstream: the scores, or the raw label values (a 0/1 indicator when k = 2).
     */
    std::vector<double> as_predictor() const;
};

struct PrincipalComponent {
    /// Centered data projected on the loading, length n.
    std::vector<double> scores;
    /// Unit-norm top eigenvector of the column covariance, length p.
    std::vector<double> loading;
    /// Column means used for centering; needed to project new rows.
    std::vector<double> column_means;
    /// Top eigenvalue of the sample covariance (divisor n - 1).
    double eigenvalue = 0;
    int iterations = 0;
};

struct PowerIterationOptions {
    double eigenvalue_tolerance = 1e-10;
    double vector_tolerance = 1e-9;
    int max_iterations = 20000;
};

/**
 * First principal component by power iteration on the column-centered covariance.
 * The sign is fixed so that the largest-magnitude loading entry is positive.
 * Throws `degenerate_matrix` if every column is constant (or n < 2).
 */
PrincipalComponent first_pc(const RealMatrix& matrix, const PowerIterationOptions& options = {});

/**
 * Scores of new rows on an existing axis, centered by the axis' own column means.
 */
std::vector<double> project_rows(const RealMatrix& rows, const PrincipalComponent& pc);

struct KmeansOptions {
    int restarts = 10;
    int max_iterations = 100;
};

struct KmeansResult {
    LatentEstimate estimate;
    /// k x p matrix of centroids, rows in label order.
    RealMatrix centers;
    /// Within-cluster sum of squares of the kept restart.
    double objective = 0;
    /// Objective after every Lloyd iteration of the kept restart.
    std::vector<double> objective_trace;
};

/**
 * Lloyd's algorithm with k-means++ seeding; the restart with the smallest within-cluster sum of squares is kept.
 * Labels are renumbered in order of first appearance, so cell 0 is always in cluster 0.
 * Throws `too_few_points` if `k < 2` or `n < k`.
 */
KmeansResult kmeans_detailed(const RealMatrix& matrix, int k, std::uint64_t seed, const KmeansOptions& options = {});

LatentEstimate kmeans(const RealMatrix& matrix, int k, std::uint64_t seed, const KmeansOptions& options = {});

/**
 * Label each row with its nearest centroid.
 */
std::vector<int> assign_to_centers(const RealMatrix& rows, const RealMatrix& centers);

/**
 * Uniformly random permutation (Fisher-Yates) drawn from `engine`.
 */
template<typename T>
void permute_in_place(std::vector<T>& values, Engine& engine) {
    for (std::size_t i = values.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_index(engine, i));
        std::swap(values[i - 1], values[j]);
    }
}

/**
 * Uniformly random permutation, deterministic in `seed`.
 */
template<typename T>
std::vector<T> permute(std::vector<T> values, std::uint64_t seed) {
    auto engine = make_engine(seed);
    permute_in_place(values, engine);
    return values;
}

/**
 * Absolute Pearson correlation. Throws `constant_input` if either vector is constant,
 * `dimension_mismatch` if lengths differ or are below 2.
 */
double abs_correlation(std::span<const double> a, std::span<const double> b);

/**
 * Hubert-Arabie adjusted Rand index between two labelings of the same cells.
 * Returns 1 when both labelings are trivially identical in pair structure (e.g. both a single cluster).
 */
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}

#endif
