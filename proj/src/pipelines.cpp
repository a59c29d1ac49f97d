#include "countsplit/pipelines.hpp"

#include "countsplit/error.hpp"
#include "countsplit/parallel.hpp"
#include "countsplit/rng.hpp"
#include "countsplit/splitting.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

namespace countsplit {

namespace {

constexpr std::uint64_t split_stream = 1;
constexpr std::uint64_t latent_stream = 2;
constexpr std::uint64_t resample_stream = 3;

std::vector<double> subset(std::span<const double> values, std::span<const std::size_t> rows) {
    std::vector<double> out;
    out.reserve(rows.size());
    for (auto r : rows) {
        out.push_back(values[r]);
    }
    return out;
}

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
}

const SizeFactors& require_known(const SizeFactorPolicy& gamma, std::size_t n_cells) {
    if (!gamma.known) {
        throw Error(ErrorCode::invalid_config, "gamma policy 'known' requires size factors");
    }
    if (gamma.known->gamma.size() != n_cells) {
        throw Error(ErrorCode::dimension_mismatch,
            fmt::format("{} known size factors for {} cells", gamma.known->gamma.size(), n_cells));
    }
    return *gamma.known;
}

// Size factors for `matrix`, whose rows are `rows` of the original input.
SizeFactors resolve(const SizeFactorPolicy& gamma, const CountMatrix& matrix, std::span<const std::size_t> rows) {
    switch (gamma.policy) {
    case GammaPolicy::known:
        return SizeFactors{subset(gamma.known->gamma, rows)};
    case GammaPolicy::unit:
        return SizeFactors::unit(matrix.n_cells());
    case GammaPolicy::per_matrix:
    case GammaPolicy::train:
        break;
    }
    return estimate_size_factors(matrix);
}

void check_policy(const SizeFactorPolicy& gamma, const CountMatrix& matrix) {
    if (gamma.policy == GammaPolicy::known) {
        require_known(gamma, matrix.n_cells());
    }
}

RealMatrix predictor_of(const LatentEstimate& latent) {
    return single_predictor(latent.as_predictor());
}

struct SlopeFit {
    GlmFit fit;
    WaldResult wald;
};

std::optional<SlopeFit> fit_slope(std::span<const double> y, const RealMatrix& predictor, std::span<const double> offsets,
    const MethodConfig& config) {
    try {
        auto fit = fit_glm(config.family, y, predictor, offsets, config.glm);
        if (!fit.converged) {
            return std::nullopt;
        }
        auto wald = wald_test(fit, 1);
        if (!std::isfinite(wald.z_value) || !std::isfinite(wald.std_error)) {
            return std::nullopt;
        }
        return SlopeFit{std::move(fit), wald};
    } catch (const Error&) {
        return std::nullopt;
    }
}

GeneResult test_gene(std::size_t gene, std::span<const double> y, const RealMatrix& predictor, std::span<const double> offsets,
    const MethodConfig& config) {
    GeneResult result;
    result.gene_index = gene;
    auto slope = fit_slope(y, predictor, offsets, config);
    if (!slope) {
        result.status = GeneStatus::unconverged;
        return result;
    }
    const auto ci = wald_ci(slope->fit, 1, config.ci_level);
    result.estimate = slope->wald.estimate;
    result.std_error = slope->wald.std_error;
    result.p_value = slope->wald.p_value;
    result.ci_lower = ci.lower;
    result.ci_upper = ci.upper;
    result.status = GeneStatus::ok;
    return result;
}

// Test every column of `response` against `latent`.
std::vector<GeneResult> test_all_genes(const CountMatrix& response, const LatentEstimate& latent, std::span<const double> offsets,
    const MethodConfig& config) {
    const auto predictor = predictor_of(latent);
    std::vector<GeneResult> results(response.n_genes());
    parallel_for(response.n_genes(), config.threads, [&](std::size_t j) {
        const auto y = response.column(j);
        results[j] = test_gene(j, y, predictor, offsets, config);
    });
    return results;
}

LatentEstimate latent_of(const CountMatrix& matrix, const SizeFactors& factors, const MethodConfig& config, std::uint64_t seed) {
    return estimate_latent(log_normalize(matrix, factors, config.pseudocount), config.estimator, seed);
}

DeReport make_report(const MethodConfig& config, const SizeFactorPolicy& gamma) {
    DeReport report;
    report.config = config;
    report.gamma_policy = gamma.policy;
    return report;
}

void require_method(const MethodConfig& config, std::initializer_list<Method> allowed, std::string_view operation) {
    if (std::find(allowed.begin(), allowed.end(), config.method) == allowed.end()) {
        throw Error(ErrorCode::invalid_config, fmt::format("{} cannot run method '{}'", operation, to_string(config.method)));
    }
}

double resampling_p(std::size_t hits, std::size_t total, bool plus_one) {
    if (plus_one) {
        return static_cast<double>(hits + 1) / static_cast<double>(total + 1);
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

// Fill p-values from per-gene observed statistics and reference pools.
void finish_resampling(DeReport& report, const std::vector<std::optional<double>>& observed,
    const std::vector<const std::vector<double>*>& pools) {
    for (std::size_t j = 0; j < report.results.size(); ++j) {
        auto& result = report.results[j];
        if (!observed[j]) {
            continue;
        }
        const auto& pool = *pools[j];
        result.reference_size = pool.size();
        if (pool.empty()) {
            result.status = GeneStatus::skipped;
            result.p_value.reset();
            continue;
        }
        const auto hits = static_cast<std::size_t>(
            std::count_if(pool.begin(), pool.end(), [&](double s) { return s >= *observed[j]; }));
        result.p_value = resampling_p(hits, pool.size(), report.config.plus_one);
        result.status = GeneStatus::ok;
    }
}

}

MethodConfig MethodConfig::for_method(Method method) {
    MethodConfig config;
    config.method = method;
    if (method == Method::pseudotime_de) {
        config.fraction = 0.8;
    }
    return config;
}

void MethodConfig::validate() const {
    const bool uses_epsilon = method == Method::count_split || method == Method::test_double_dip ||
        method == Method::cluster_mean_countsplit;
    if (uses_epsilon && !(epsilon > 0 && epsilon < 1)) {
        throw Error(ErrorCode::invalid_epsilon, fmt::format("epsilon must lie in (0, 1), got {}", epsilon));
    }
    const bool uses_fraction = method == Method::cell_split || method == Method::pseudotime_de;
    if (uses_fraction && !(fraction > 0 && fraction < 1)) {
        throw Error(ErrorCode::invalid_fraction, fmt::format("fraction must lie in (0, 1), got {}", fraction));
    }
    const bool resampling =
        method == Method::jackstraw_full || method == Method::jackstraw_efficient || method == Method::pseudotime_de;
    if (resampling && resamples < 1) {
        throw Error(ErrorCode::invalid_config, fmt::format("resamples must be at least 1, got {}", resamples));
    }
    if (method == Method::jackstraw_efficient && permuted_genes < 1) {
        throw Error(ErrorCode::invalid_config, fmt::format("permuted genes must be at least 1, got {}", permuted_genes));
    }
    if (!(ci_level > 0 && ci_level < 1)) {
        throw Error(ErrorCode::invalid_config, fmt::format("confidence level must lie in (0, 1), got {}", ci_level));
    }
    if (!(pseudocount > 0)) {
        throw Error(ErrorCode::invalid_config, fmt::format("pseudocount must be positive, got {}", pseudocount));
    }
    if (threads < 1) {
        throw Error(ErrorCode::invalid_config, fmt::format("threads must be at least 1, got {}", threads));
    }
}

std::size_t DeReport::count(GeneStatus status) const {
    return static_cast<std::size_t>(
        std::count_if(results.begin(), results.end(), [&](const GeneResult& r) { return r.status == status; }));
}

LatentEstimate estimate_latent(const RealMatrix& normalized, Estimator estimator, std::uint64_t seed) {
    if (estimator == Estimator::kmeans2) {
        return kmeans(normalized, 2, seed);
    }
    return LatentEstimate::trajectory(first_pc(normalized).scores);
}

DeReport de_count_split(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config) {
    require_method(config, {Method::count_split}, "count splitting");
    config.validate();
    check_policy(gamma, matrix);

    const auto rows = all_rows(matrix.n_cells());
    const auto split = count_split(matrix, config.epsilon, derive_seed(config.seed, {split_stream}));
    const auto train_factors = resolve(gamma, split.train, rows);
    const auto test_factors = gamma.policy == GammaPolicy::train ? train_factors : resolve(gamma, split.test, rows);

    auto report = make_report(config, gamma);
    report.latent = latent_of(split.train, train_factors, config, derive_seed(config.seed, {latent_stream}));
    report.latent_rows = rows;
    report.results = test_all_genes(split.test, report.latent, test_factors.gamma, config);
    return report;
}

DeReport de_double_dip(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config) {
    require_method(config, {Method::double_dip}, "double dipping");
    config.validate();
    check_policy(gamma, matrix);

    const auto rows = all_rows(matrix.n_cells());
    const auto factors = resolve(gamma, matrix, rows);
    auto report = make_report(config, gamma);
    report.latent = latent_of(matrix, factors, config, derive_seed(config.seed, {latent_stream}));
    report.latent_rows = rows;
    report.results = test_all_genes(matrix, report.latent, factors.gamma, config);
    return report;
}

DeReport de_test_double_dip(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config) {
    require_method(config, {Method::test_double_dip}, "test double dipping");
    config.validate();
    check_policy(gamma, matrix);

    const auto rows = all_rows(matrix.n_cells());
    const auto split = count_split(matrix, config.epsilon, derive_seed(config.seed, {split_stream}));
    const auto factors = resolve(gamma, split.test, rows);
    auto report = make_report(config, gamma);
    report.latent = latent_of(split.test, factors, config, derive_seed(config.seed, {latent_stream}));
    report.latent_rows = rows;
    report.results = test_all_genes(split.test, report.latent, factors.gamma, config);
    return report;
}

DeReport de_cell_split(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config) {
    require_method(config, {Method::cell_split}, "cell splitting");
    config.validate();
    check_policy(gamma, matrix);

    const auto cells = cell_split(matrix, config.fraction, derive_seed(config.seed, {split_stream}));
    const auto train = matrix.select_rows(cells.train_rows);
    const auto test = matrix.select_rows(cells.test_rows);
    const auto train_factors = resolve(gamma, train, cells.train_rows);
    const auto test_factors = resolve(gamma, test, cells.test_rows);
    const auto train_normalized = log_normalize(train, train_factors, config.pseudocount);
    const auto test_normalized = log_normalize(test, test_factors, config.pseudocount);

    auto report = make_report(config, gamma);
    if (config.estimator == Estimator::kmeans2) {
        const auto fit = kmeans_detailed(train_normalized, 2, derive_seed(config.seed, {latent_stream}));
        report.latent = LatentEstimate::clusters(assign_to_centers(test_normalized, fit.centers), 2);
    } else {
        const auto pc = first_pc(train_normalized);
        report.latent = LatentEstimate::trajectory(project_rows(test_normalized, pc));
    }
    report.latent_rows = cells.test_rows;
    report.results = test_all_genes(test, report.latent, test_factors.gamma, config);
    return report;
}

DeReport de_gene_split(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config) {
    require_method(config, {Method::gene_split}, "gene splitting");
    config.validate();
    check_policy(gamma, matrix);

    const auto rows = all_rows(matrix.n_cells());
    const auto genes = gene_split(matrix, derive_seed(config.seed, {split_stream}));
    const std::array<CountMatrix, 2> halves{matrix.select_columns(genes.train_cols), matrix.select_columns(genes.test_cols)};
    const std::array<const std::vector<std::size_t>*, 2> half_cols{&genes.train_cols, &genes.test_cols};
    const auto offsets = resolve(gamma, matrix, rows);

    auto report = make_report(config, gamma);
    report.results.resize(matrix.n_genes());
    report.latent_rows = rows;
    std::array<std::optional<LatentEstimate>, 2> latents;
    for (std::size_t h = 0; h < 2; ++h) {
        try {
            latents[h] = latent_of(halves[h], offsets, config, derive_seed(config.seed, {latent_stream, h}));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::degenerate_matrix && e.code() != ErrorCode::degenerate_cell) {
                throw;
            }
        }
    }

    // Genes in half h are tested against the other half's estimate, recorded as group 1 - h.
    for (std::size_t h = 0; h < 2; ++h) {
        const auto& latent = latents[1 - h];
        const auto& cols = *half_cols[h];
        const auto& response = halves[h];
        std::optional<RealMatrix> predictor;
        if (latent) {
            predictor = predictor_of(*latent);
        }
        parallel_for(cols.size(), config.threads, [&](std::size_t c) {
            const auto gene = cols[c];
            GeneResult result;
            if (predictor) {
                result = test_gene(gene, response.column(c), *predictor, offsets.gamma, config);
            }
            result.gene_index = gene;
            result.latent_group = static_cast<int>(1 - h);
            report.results[gene] = result;
        });
    }
    if (latents[0]) {
        report.latent = *latents[0];
    }
    report.secondary_latent = latents[1];
    return report;
}

DeReport jackstraw(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config) {
    require_method(config, {Method::jackstraw_full, Method::jackstraw_efficient}, "jackstraw");
    config.validate();
    check_policy(gamma, matrix);
    const auto n = matrix.n_cells();
    const auto p = matrix.n_genes();
    const auto rows = all_rows(n);
    const auto B = static_cast<std::size_t>(config.resamples);
    const bool full = config.method == Method::jackstraw_full;
    if (!full && static_cast<std::size_t>(config.permuted_genes) > p) {
        throw Error(ErrorCode::invalid_config, fmt::format("cannot permute {} of {} genes", config.permuted_genes, p));
    }

    const auto factors = resolve(gamma, matrix, rows);
    auto report = make_report(config, gamma);
    report.latent = latent_of(matrix, factors, config, derive_seed(config.seed, {latent_stream}));
    report.latent_rows = rows;
    report.results = test_all_genes(matrix, report.latent, factors.gamma, config);

    std::vector<std::optional<double>> observed(p);
    for (std::size_t j = 0; j < p; ++j) {
        if (report.results[j].status == GeneStatus::ok) {
            observed[j] = std::abs(*report.results[j].estimate / *report.results[j].std_error);
        }
    }

    // |z| of permuted genes against the latent estimate of the permuted matrix.
    auto permuted_statistics = [&](const CountMatrix& permuted, std::span<const std::size_t> genes, std::uint64_t latent_seed) {
        std::vector<std::optional<double>> stats(genes.size());
        std::optional<RealMatrix> predictor;
        std::vector<double> offsets;
        try {
            const auto permuted_factors = resolve(gamma, permuted, rows);
            predictor = predictor_of(latent_of(permuted, permuted_factors, config, latent_seed));
            offsets = permuted_factors.gamma;
        } catch (const Error&) {
            return stats;
        }
        for (std::size_t g = 0; g < genes.size(); ++g) {
            if (auto slope = fit_slope(permuted.column(genes[g]), *predictor, offsets, config)) {
                stats[g] = std::abs(slope->wald.z_value);
            }
        }
        return stats;
    };

    auto permute_column = [&](CountMatrix& target, std::size_t gene, Engine& engine) {
        std::vector<Count> column(n);
        for (std::size_t i = 0; i < n; ++i) {
            column[i] = matrix(i, gene);
        }
        permute_in_place(column, engine);
        for (std::size_t i = 0; i < n; ++i) {
            target(i, gene) = column[i];
        }
    };

    if (full) {
        std::vector<std::vector<std::optional<double>>> stats(p, std::vector<std::optional<double>>(B));
        parallel_for(p * B, config.threads, [&](std::size_t unit) {
            const auto j = unit / B;
            const auto b = unit % B;
            if (!observed[j]) {
                return;
            }
            auto engine = make_engine(derive_seed(config.seed, {resample_stream, j, b}));
            auto permuted = matrix;
            permute_column(permuted, j, engine);
            const std::array<std::size_t, 1> gene{j};
            stats[j][b] = permuted_statistics(permuted, gene, derive_seed(config.seed, {latent_stream, j, b}))[0];
        });
        std::vector<std::vector<double>> pools(p);
        std::vector<const std::vector<double>*> pool_of(p);
        for (std::size_t j = 0; j < p; ++j) {
            pool_of[j] = &pools[j];
            if (!observed[j]) {
                continue;
            }
            for (const auto& s : stats[j]) {
                if (s) {
                    pools[j].push_back(*s);
                } else {
                    ++report.dropped_fits;
                }
            }
        }
        finish_resampling(report, observed, pool_of);
        return report;
    }

    const auto s = static_cast<std::size_t>(config.permuted_genes);
    std::vector<std::vector<std::optional<double>>> stats(B);
    parallel_for(B, config.threads, [&](std::size_t b) {
        auto engine = make_engine(derive_seed(config.seed, {resample_stream, b}));
        std::vector<std::size_t> order = all_rows(p);
        for (std::size_t k = 0; k < s; ++k) {
            const auto pick = k + static_cast<std::size_t>(uniform_index(engine, p - k));
            std::swap(order[k], order[pick]);
        }
        order.resize(s);
        auto permuted = matrix;
        for (auto gene : order) {
            permute_column(permuted, gene, engine);
        }
        stats[b] = permuted_statistics(permuted, order, derive_seed(config.seed, {latent_stream, b}));
    });
    std::vector<double> pool;
    for (const auto& batch : stats) {
        for (const auto& st : batch) {
            if (st) {
                pool.push_back(*st);
            } else {
                ++report.dropped_fits;
            }
        }
    }
    finish_resampling(report, observed, std::vector<const std::vector<double>*>(p, &pool));
    return report;
}

DeReport pseudotime_de(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config) {
    require_method(config, {Method::pseudotime_de}, "PseudotimeDE");
    config.validate();
    check_policy(gamma, matrix);
    const auto p = matrix.n_genes();
    const auto rows = all_rows(matrix.n_cells());
    const auto B = static_cast<std::size_t>(config.resamples);

    const auto factors = resolve(gamma, matrix, rows);
    auto report = make_report(config, gamma);
    report.latent = latent_of(matrix, factors, config, derive_seed(config.seed, {latent_stream}));
    report.latent_rows = rows;
    report.results = test_all_genes(matrix, report.latent, factors.gamma, config);

    std::vector<std::optional<double>> observed(p);
    for (std::size_t j = 0; j < p; ++j) {
        if (report.results[j].status == GeneStatus::ok) {
            observed[j] = std::abs(*report.results[j].estimate);
        }
    }

    std::vector<std::vector<std::optional<double>>> stats(B);
    parallel_for(B, config.threads, [&](std::size_t b) {
        stats[b].resize(p);
        const auto sub = cell_split(matrix, config.fraction, derive_seed(config.seed, {resample_stream, b}));
        const auto subsample = matrix.select_rows(sub.train_rows);
        std::optional<RealMatrix> predictor;
        std::vector<double> offsets;
        try {
            const auto sub_factors = resolve(gamma, subsample, sub.train_rows);
            auto latent = latent_of(subsample, sub_factors, config, derive_seed(config.seed, {latent_stream, b}));
            auto shuffled = permute(latent.as_predictor(), derive_seed(config.seed, {resample_stream, b, 1}));
            predictor = single_predictor(shuffled);
            offsets = sub_factors.gamma;
        } catch (const Error&) {
            return;
        }
        for (std::size_t j = 0; j < p; ++j) {
            if (!observed[j]) {
                continue;
            }
            if (auto slope = fit_slope(subsample.column(j), *predictor, offsets, config)) {
                stats[b][j] = std::abs(slope->wald.estimate);
            }
        }
    });

    std::vector<std::vector<double>> pools(p);
    std::vector<const std::vector<double>*> pool_of(p);
    for (std::size_t j = 0; j < p; ++j) {
        pool_of[j] = &pools[j];
        if (!observed[j]) {
            continue;
        }
        for (std::size_t b = 0; b < B; ++b) {
            if (!stats[b].empty() && stats[b][j]) {
                pools[j].push_back(*stats[b][j]);
            } else {
                ++report.dropped_fits;
            }
        }
    }
    finish_resampling(report, observed, pool_of);
    return report;
}

DeReport run_de(const CountMatrix& matrix, const SizeFactorPolicy& gamma, const MethodConfig& config) {
    switch (config.method) {
    case Method::count_split:
        return de_count_split(matrix, gamma, config);
    case Method::double_dip:
        return de_double_dip(matrix, gamma, config);
    case Method::test_double_dip:
        return de_test_double_dip(matrix, gamma, config);
    case Method::cell_split:
        return de_cell_split(matrix, gamma, config);
    case Method::gene_split:
        return de_gene_split(matrix, gamma, config);
    case Method::jackstraw_full:
    case Method::jackstraw_efficient:
        return jackstraw(matrix, gamma, config);
    case Method::pseudotime_de:
        return pseudotime_de(matrix, gamma, config);
    case Method::cluster_mean_naive:
    case Method::cluster_mean_countsplit:
        break;
    }
    throw Error(ErrorCode::invalid_config, fmt::format("'{}' is not a per-gene method", to_string(config.method)));
}

std::vector<int> average_linkage_two_clusters(const RealMatrix& rows) {
    const auto n = rows.n_rows;
    if (n < 2) {
        throw Error(ErrorCode::too_few_points, fmt::format("clustering needs at least 2 rows, got {}", n));
    }

    std::vector<double> dist(n * n, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            double sum = 0;
            for (std::size_t j = 0; j < rows.n_cols; ++j) {
                const double d = rows(a, j) - rows(b, j);
                sum += d * d;
            }
            dist[a * n + b] = dist[b * n + a] = std::sqrt(sum);
        }
    }

    struct Merge {
        std::size_t a;
        std::size_t b;
        double height;
    };
    std::vector<Merge> merges;
    merges.reserve(n - 1);
    std::vector<std::size_t> size(n, 1);
    std::vector<char> active(n, 1);
    std::vector<std::size_t> chain;

    // Nearest-neighbour chain; the merged cluster keeps the smaller index.
    for (std::size_t remaining = n; remaining > 1;) {
        if (chain.empty()) {
            chain.push_back(static_cast<std::size_t>(std::find(active.begin(), active.end(), 1) - active.begin()));
        }
        const auto a = chain.back();
        const auto previous = chain.size() >= 2 ? chain[chain.size() - 2] : n;
        std::size_t nearest = previous;
        double best = previous < n ? dist[a * n + previous] : std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < n; ++c) {
            if (c != a && active[c] && dist[a * n + c] < best) {
                best = dist[a * n + c];
                nearest = c;
            }
        }
        if (nearest != previous) {
            chain.push_back(nearest);
            continue;
        }
        chain.pop_back();
        chain.pop_back();
        const auto keep = std::min(a, nearest);
        const auto drop = std::max(a, nearest);
        merges.push_back({keep, drop, best});
        const auto na = static_cast<double>(size[keep]);
        const auto nb = static_cast<double>(size[drop]);
        for (std::size_t c = 0; c < n; ++c) {
            if (active[c] && c != keep && c != drop) {
                const double updated = (na * dist[keep * n + c] + nb * dist[drop * n + c]) / (na + nb);
                dist[keep * n + c] = dist[c * n + keep] = updated;
            }
        }
        size[keep] += size[drop];
        active[drop] = 0;
        --remaining;
    }

    // Undo the highest merge: apply the n - 2 lowest ones.
    std::stable_sort(merges.begin(), merges.end(), [](const Merge& x, const Merge& y) { return x.height < y.height; });
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (std::size_t m = 0; m + 1 < merges.size(); ++m) {
        parent[find(merges[m].b)] = find(merges[m].a);
    }

    std::vector<int> labels(n);
    const auto first_root = find(0);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = find(i) == first_root ? 0 : 1;
    }
    return labels;
}

ClusterMeanTest cluster_mean_test(const CountMatrix& matrix, const MethodConfig& config) {
    require_method(config, {Method::cluster_mean_naive, Method::cluster_mean_countsplit}, "cluster mean test");
    config.validate();
    const auto n = matrix.n_cells();
    const auto q = matrix.n_genes();
    if (n < 4) {
        throw Error(ErrorCode::too_few_points, fmt::format("cluster mean test needs at least 4 cells, got {}", n));
    }
    if (q < 1) {
        throw Error(ErrorCode::too_few_genes, "cluster mean test needs at least 1 gene");
    }

    auto log1p_matrix = [](const CountMatrix& m) {
        RealMatrix out(m.n_cells(), m.n_genes());
        for (std::size_t k = 0; k < out.values.size(); ++k) {
            out.values[k] = std::log1p(static_cast<double>(m.values()[k]));
        }
        return out;
    };

    RealMatrix cluster_on;
    RealMatrix test_on;
    if (config.method == Method::cluster_mean_naive) {
        cluster_on = log1p_matrix(matrix);
        test_on = cluster_on;
    } else {
        const auto split = count_split(matrix, config.epsilon, derive_seed(config.seed, {split_stream}));
        cluster_on = log1p_matrix(split.train);
        test_on = log1p_matrix(split.test);
    }

    ClusterMeanTest result;
    result.labels = average_linkage_two_clusters(cluster_on);
    std::vector<double> means0(q, 0.0);
    std::vector<double> means1(q, 0.0);
    std::vector<double> column_means(q, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto& target = result.labels[i] == 0 ? means0 : means1;
        ++result.cluster_sizes[result.labels[i]];
        for (std::size_t j = 0; j < q; ++j) {
            target[j] += test_on(i, j);
            column_means[j] += test_on(i, j);
        }
    }
    const auto n0 = static_cast<double>(result.cluster_sizes[0]);
    const auto n1 = static_cast<double>(result.cluster_sizes[1]);
    double diff2 = 0;
    for (std::size_t j = 0; j < q; ++j) {
        column_means[j] /= static_cast<double>(n);
        const double d = means0[j] / n0 - means1[j] / n1;
        diff2 += d * d;
    }
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
            const double d = test_on(i, j) - column_means[j];
            ss += d * d;
        }
    }
    result.sigma = std::sqrt(ss / static_cast<double>(n * q - q));
    if (!(result.sigma > 0)) {
        throw Error(ErrorCode::degenerate_clusters, "transformed test data have zero variance");
    }
    result.difference_norm = std::sqrt(diff2);
    result.statistic = result.difference_norm / (result.sigma * std::sqrt(1 / n0 + 1 / n1));
    result.p_value = boost::math::gamma_q(static_cast<double>(q) / 2, result.statistic * result.statistic / 2);
    return result;
}

namespace {

struct NamedMethod {
    Method method;
    std::string_view name;
};

constexpr std::array<NamedMethod, 10> method_names{{
    {Method::count_split, "count_split"},
    {Method::double_dip, "double_dip"},
    {Method::test_double_dip, "test_double_dip"},
    {Method::cell_split, "cell_split"},
    {Method::gene_split, "gene_split"},
    {Method::jackstraw_full, "jackstraw_full"},
    {Method::jackstraw_efficient, "jackstraw_efficient"},
    {Method::pseudotime_de, "pseudotime_de"},
    {Method::cluster_mean_naive, "cluster_mean_naive"},
    {Method::cluster_mean_countsplit, "cluster_mean_countsplit"},
}};

std::string compact(std::string_view name) {
    std::string out;
    for (char c : name) {
        if (c != '_' && c != '-') {
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    return out;
}

}

std::string_view to_string(Method method) {
    for (const auto& entry : method_names) {
        if (entry.method == method) {
            return entry.name;
        }
    }
    return "unknown";
}

std::string_view to_string(Estimator estimator) {
    return estimator == Estimator::kmeans2 ? "kmeans2" : "pc1";
}

std::string_view to_string(GammaPolicy policy) {
    switch (policy) {
    case GammaPolicy::known:
        return "known";
    case GammaPolicy::unit:
        return "unit";
    case GammaPolicy::per_matrix:
        return "per_matrix";
    case GammaPolicy::train:
        return "train";
    }
    return "unknown";
}

std::string_view to_string(GeneStatus status) {
    switch (status) {
    case GeneStatus::ok:
        return "ok";
    case GeneStatus::unconverged:
        return "unconverged";
    case GeneStatus::skipped:
        return "skipped";
    }
    return "unknown";
}

std::string_view to_string(Family family) {
    return family == Family::negative_binomial ? "negative_binomial" : "poisson";
}

Method parse_method(std::string_view name) {
    const auto key = compact(name);
    std::string valid;
    for (const auto& entry : method_names) {
        if (compact(entry.name) == key) {
            return entry.method;
        }
        valid += valid.empty() ? "" : ", ";
        valid += entry.name;
    }
    throw Error(ErrorCode::invalid_config, fmt::format("unknown method '{}'; valid methods: {}", name, valid));
}

Estimator parse_estimator(std::string_view name) {
    const auto key = compact(name);
    if (key == "pc1" || key == "pc1trajectory") {
        return Estimator::pc1_trajectory;
    }
    if (key == "kmeans" || key == "kmeans2") {
        return Estimator::kmeans2;
    }
    throw Error(ErrorCode::invalid_config, fmt::format("unknown estimator '{}'; valid estimators: pc1, kmeans2", name));
}

GammaPolicy parse_gamma_policy(std::string_view name) {
    const auto key = compact(name);
    if (key == "known") {
        return GammaPolicy::known;
    }
    if (key == "unit") {
        return GammaPolicy::unit;
    }
    if (key == "permatrix" || key == "estimate") {
        return GammaPolicy::per_matrix;
    }
    if (key == "train") {
        return GammaPolicy::train;
    }
    throw Error(ErrorCode::invalid_config,
        fmt::format("unknown gamma policy '{}'; valid policies: known, unit, per_matrix, train", name));
}

Family parse_family(std::string_view name) {
    const auto key = compact(name);
    if (key == "poisson") {
        return Family::poisson;
    }
    if (key == "negativebinomial" || key == "negbin" || key == "nb") {
        return Family::negative_binomial;
    }
    throw Error(ErrorCode::invalid_config,
        fmt::format("unknown family '{}'; valid families: poisson, negative_binomial", name));
}

namespace {

std::string optional_field(const std::optional<double>& value) {
    return value ? fmt::format("{:.17g}", *value) : std::string("NA");
}

nlohmann::json optional_json(const std::optional<double>& value) {
    return value ? nlohmann::json(*value) : nlohmann::json(nullptr);
}

}

std::string format_de_report_csv(const DeReport& report, const std::optional<std::vector<std::string>>& gene_names) {
    if (gene_names && gene_names->size() != report.results.size()) {
        throw Error(ErrorCode::dimension_mismatch,
            fmt::format("{} gene names for {} results", gene_names->size(), report.results.size()));
    }
    std::string out = fmt::format("# schema_version={}\n", de_report_schema_version);
    out += "gene,name,estimate,std_error,p_value,ci_lower,ci_upper,status,latent_group\n";
    for (const auto& r : report.results) {
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.gene_index, gene_names ? (*gene_names)[r.gene_index] : std::string(),
            optional_field(r.estimate), optional_field(r.std_error),
            optional_field(r.p_value), optional_field(r.ci_lower), optional_field(r.ci_upper), to_string(r.status),
            r.latent_group);
    }
    return out;
}

namespace {

nlohmann::json method_config_json(const MethodConfig& config) {
    return {
        {"method", to_string(config.method)},
        {"estimator", to_string(config.estimator)},
        {"family", to_string(config.family)},
        {"epsilon", config.epsilon},
        {"fraction", config.fraction},
        {"resamples", config.resamples},
        {"permuted_genes", config.permuted_genes},
        {"seed", config.seed},
        {"plus_one", config.plus_one},
        {"ci_level", config.ci_level},
        {"pseudocount", config.pseudocount},
    };
}

}

std::string format_de_report_json(const DeReport& report) {
    nlohmann::json results = nlohmann::json::array();
    for (const auto& r : report.results) {
        results.push_back({
            {"gene", r.gene_index},
            {"estimate", optional_json(r.estimate)},
            {"std_error", optional_json(r.std_error)},
            {"p_value", optional_json(r.p_value)},
            {"ci_lower", optional_json(r.ci_lower)},
            {"ci_upper", optional_json(r.ci_upper)},
            {"status", to_string(r.status)},
            {"latent_group", r.latent_group},
            {"reference_size", r.reference_size},
        });
    }
    auto latent_json = [](const LatentEstimate& latent) {
        if (latent.kind == LatentKind::clusters) {
            return nlohmann::json{{"kind", "clusters"}, {"k", latent.k}, {"labels", latent.labels}};
        }
        return nlohmann::json{{"kind", "trajectory"}, {"scores", latent.scores}};
    };
    nlohmann::json doc = {
        {"schema_version", de_report_schema_version},
        {"config", method_config_json(report.config)},
        {"gamma_policy", to_string(report.gamma_policy)},
        {"latent", latent_json(report.latent)},
        {"latent_rows", report.latent_rows},
        {"dropped_fits", report.dropped_fits},
        {"results", results},
    };
    if (report.secondary_latent) {
        doc["secondary_latent"] = latent_json(*report.secondary_latent);
    }
    return doc.dump(2) + "\n";
}

}
