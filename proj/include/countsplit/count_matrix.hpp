#ifndef COUNTSPLIT_COUNT_MATRIX_HPP
#define COUNTSPLIT_COUNT_MATRIX_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

/**
 * @file count_matrix.hpp
 * @brief Dense cell-by-gene count matrices, size factors and log-normalization.
 */

namespace countsplit {

using Count = std::uint64_t;

/**
 * Dense row-major matrix of non-negative integer counts, one row per cell and one column per gene.
 * Names are carried along for reporting only.
 */
class CountMatrix {
public:
    CountMatrix() = default;

    /**
     * Zero-filled matrix of the given shape.
     */
    CountMatrix(std::size_t n_cells, std::size_t n_genes);

    /**
     * Takes ownership of `counts`, which must have length `n_cells * n_genes`.
     */
    CountMatrix(std::size_t n_cells, std::size_t n_genes, std::vector<Count> counts);

    std::size_t n_cells() const { return n_cells_; }
    std::size_t n_genes() const { return n_genes_; }

    Count operator()(std::size_t cell, std::size_t gene) const { return counts_[cell * n_genes_ + gene]; }
    Count& operator()(std::size_t cell, std::size_t gene) { return counts_[cell * n_genes_ + gene]; }

    std::span<const Count> row(std::size_t cell) const { return {counts_.data() + cell * n_genes_, n_genes_}; }
    std::span<const Count> values() const { return counts_; }
    std::span<Count> values() { return counts_; }

    /**
     * Copy of one gene's counts as reals, ready to be used as a GLM response.
     */
    std::vector<double> column(std::size_t gene) const;

    std::vector<double> row_sums() const;

    /**
     * Submatrix with the given rows (in the given order) and all genes.
     */
    CountMatrix select_rows(std::span<const std::size_t> rows) const;

    /**
     * Submatrix with all cells and the given genes (in the given order).
     */
    CountMatrix select_columns(std::span<const std::size_t> cols) const;

    const std::optional<std::vector<std::string>>& gene_names() const { return gene_names_; }
    const std::optional<std::vector<std::string>>& cell_names() const { return cell_names_; }
    void set_gene_names(std::vector<std::string> names);
    void set_cell_names(std::vector<std::string> names);

    bool operator==(const CountMatrix& other) const {
        return n_cells_ == other.n_cells_ && n_genes_ == other.n_genes_ && counts_ == other.counts_;
    }

private:
    std::size_t n_cells_ = 0;
    std::size_t n_genes_ = 0;
    std::vector<Count> counts_;
    std::optional<std::vector<std::string>> gene_names_;
    std::optional<std::vector<std::string>> cell_names_;
};

/**
 * Dense row-major matrix of finite reals.
 */
struct RealMatrix {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<double> values;

    RealMatrix() = default;
    RealMatrix(std::size_t rows, std::size_t cols) : n_rows(rows), n_cols(cols), values(rows * cols, 0.0) {}

    double operator()(std::size_t i, std::size_t j) const { return values[i * n_cols + j]; }
    double& operator()(std::size_t i, std::size_t j) { return values[i * n_cols + j]; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * n_cols, n_cols}; }

    RealMatrix select_rows(std::span<const std::size_t> rows) const;
};

/**
 * Per-cell size factors, all strictly positive.
 */
struct SizeFactors {
    std::vector<double> gamma;

    static SizeFactors unit(std::size_t n_cells) { return SizeFactors{std::vector<double>(n_cells, 1.0)}; }
};

enum class MatrixFormat { csv_dense, matrix_market };

/**
 * Guess the format from the file extension: `.mtx` is MatrixMarket, anything else is CSV.
 */
MatrixFormat format_from_path(const std::filesystem::path& path);

CountMatrix load_matrix(const std::filesystem::path& path, MatrixFormat format);

/**
 * Write `matrix` so that `load_matrix()` reproduces its counts exactly.
 * CSV output includes a header row only if gene names are present.
 */
void save_matrix(const CountMatrix& matrix, const std::filesystem::path& path, MatrixFormat format);

CountMatrix parse_csv(const std::string& text);
std::string format_csv(const CountMatrix& matrix);
CountMatrix parse_matrix_market(const std::string& text);
std::string format_matrix_market(const CountMatrix& matrix);

/**
 * Library-size factors: row sums scaled to a geometric mean of 1.
 * Throws `degenerate_cell` if any cell has no counts.
 */
SizeFactors estimate_size_factors(const CountMatrix& matrix);

/**
 * Entry (i, j) becomes `log(X_ij / gamma_i + pseudocount)`.
 */
RealMatrix log_normalize(const CountMatrix& matrix, const SizeFactors& size_factors, double pseudocount = 1.0);

}

#endif
