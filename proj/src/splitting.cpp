#include "countsplit/splitting.hpp"

#include "countsplit/error.hpp"
#include "countsplit/latent.hpp"
#include "countsplit/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace countsplit {

namespace {

void check_epsilon(double epsilon) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
        throw Error(ErrorCode::invalid_epsilon, fmt::format("epsilon must lie in (0, 1), got {}", epsilon));
    }
}

// Draws the training matrix; shared by count_split and mcv_split so their streams line up.
CountMatrix draw_train(const CountMatrix& matrix, double epsilon, Engine& engine) {
    CountMatrix train(matrix.n_cells(), matrix.n_genes());
    auto src = matrix.values();
    auto dst = train.values();
    for (std::size_t k = 0; k < src.size(); ++k) {
        dst[k] = sample_binomial(engine, src[k], epsilon);
    }
    return train;
}

}

SplitPair count_split(const CountMatrix& matrix, double epsilon, std::uint64_t seed) {
    check_epsilon(epsilon);
    auto engine = make_engine(seed);
    SplitPair out;
    out.epsilon = epsilon;
    out.seed = seed;
    out.train = draw_train(matrix, epsilon, engine);
    out.test = CountMatrix(matrix.n_cells(), matrix.n_genes());
    auto src = matrix.values();
    auto tr = out.train.values();
    auto te = out.test.values();
    for (std::size_t k = 0; k < src.size(); ++k) {
        te[k] = src[k] - tr[k];
    }
    if (matrix.gene_names()) {
        out.train.set_gene_names(*matrix.gene_names());
        out.test.set_gene_names(*matrix.gene_names());
    }
    return out;
}

SplitPair mcv_split(const CountMatrix& matrix, const McvConfig& config, std::uint64_t seed) {
    check_epsilon(config.epsilon);
    const auto n = matrix.n_cells();
    if (config.capture_prob.size() != n || config.overlap_prob.size() != n) {
        throw Error(ErrorCode::invalid_config,
            fmt::format("capture_prob and overlap_prob must have one entry per cell ({})", n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(config.capture_prob[i] > 0.0 && config.capture_prob[i] <= 1.0)) {
            throw Error(ErrorCode::invalid_config, fmt::format("capture_prob[{}] must lie in (0, 1]", i));
        }
        if (!(config.overlap_prob[i] >= 0.0 && config.overlap_prob[i] < 1.0)) {
            throw Error(ErrorCode::invalid_config, fmt::format("overlap_prob[{}] must lie in [0, 1)", i));
        }
    }

    auto engine = make_engine(seed);
    SplitPair out;
    out.epsilon = config.epsilon;
    out.seed = seed;
    out.train = draw_train(matrix, config.epsilon, engine);
    out.test = CountMatrix(n, matrix.n_genes());
    const auto p = matrix.n_genes();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            const auto train = out.train(i, j);
            const auto both = sample_binomial(engine, train, config.overlap_prob[i]);
            out.test(i, j) = matrix(i, j) - train + both;
        }
    }
    return out;
}

CellSplit cell_split(const CountMatrix& matrix, double fraction, std::uint64_t seed) {
    const auto n = matrix.n_cells();
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw Error(ErrorCode::invalid_fraction, fmt::format("fraction must lie in (0, 1), got {}", fraction));
    }
    const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (n_train < 1 || n_train + 1 > n) {
        throw Error(ErrorCode::invalid_fraction,
            fmt::format("fraction {} of {} cells leaves an empty train or test set", fraction, n));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    order = permute(std::move(order), seed);

    CellSplit out;
    out.fraction = fraction;
    out.train_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(out.train_rows.begin(), out.train_rows.end());
    std::sort(out.test_rows.begin(), out.test_rows.end());
    return out;
}

GeneSplit gene_split(const CountMatrix& matrix, std::uint64_t seed) {
    const auto p = matrix.n_genes();
    if (p < 2) {
        throw Error(ErrorCode::too_few_genes, fmt::format("gene splitting needs at least 2 genes, got {}", p));
    }
    std::vector<std::size_t> order(p);
    std::iota(order.begin(), order.end(), 0);
    order = permute(std::move(order), seed);

    const auto n_train = (p + 1) / 2;
    GeneSplit out;
    out.train_cols.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test_cols.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(out.train_cols.begin(), out.train_cols.end());
    std::sort(out.test_cols.begin(), out.test_cols.end());
    return out;
}

}
