#ifndef COUNTSPLIT_SPLITTING_HPP
#define COUNTSPLIT_SPLITTING_HPP

#include "countsplit/count_matrix.hpp"

#include <cstdint>
#include <vector>

/**
 * @file splitting.hpp
 * @brief Data-splitting strategies: binomial count splitting, its three-step overlap variant, and cell/gene splits.
 */

namespace countsplit {

/**
 * Train/test pair from thinning. `train + test` reproduces the input elementwise.
 */
struct SplitPair {
    CountMatrix train;
    CountMatrix test;
    double epsilon = 0.5;
    std::uint64_t seed = 0;
};

/**
 * Disjoint row sets covering every cell. Indices are 0-based and sorted.
 */
struct CellSplit {
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
    double fraction = 0.5;
};

/**
 * Disjoint gene sets covering every column. Indices are 0-based and sorted.
 */
struct GeneSplit {
    std::vector<std::size_t> train_cols;
    std::vector<std::size_t> test_cols;
};

/**
 * Per-cell settings for the three-step split with overlap.
 * `overlap_prob[i]` is the probability that a training molecule of cell `i` was also seen by the test experiment.
 * `capture_prob` is the per-cell capture probability of the binomial measurement model; it is validated and recorded but not
 * used to derive `overlap_prob`.
 */
struct McvConfig {
    double epsilon = 0.5;
    std::vector<double> capture_prob;
    std::vector<double> overlap_prob;
};

/**
 * Draw `train_ij ~ Binomial(X_ij, epsilon)` independently for every entry (row-major draw order) and set `test = X - train`.
 * Throws `invalid_epsilon` unless `0 < epsilon < 1`.
 */
SplitPair count_split(const CountMatrix& matrix, double epsilon, std::uint64_t seed);

/**
 * Three-step split: `train ~ Binomial(X, epsilon)`, `both ~ Binomial(train, overlap_prob[i])`, `test = X - train + both`.
 * The train draws consume the stream exactly like `count_split()`, so an all-zero `overlap_prob` gives identical output.
 */
SplitPair mcv_split(const CountMatrix& matrix, const McvConfig& config, std::uint64_t seed);

/**
 * Uniformly random partition of the cells with `round(fraction * n)` training rows.
 * Throws `invalid_fraction` if either side would be empty.
 */
CellSplit cell_split(const CountMatrix& matrix, double fraction, std::uint64_t seed);

/**
 * Uniformly random half/half partition of the genes, `ceil(p/2)` to train.
 */
GeneSplit gene_split(const CountMatrix& matrix, std::uint64_t seed);

}

#endif
