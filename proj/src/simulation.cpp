#include "countsplit/simulation.hpp"

#include "countsplit/error.hpp"
#include "countsplit/glm.hpp"
#include "countsplit/parallel.hpp"
#include "countsplit/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

namespace countsplit {

namespace {

constexpr std::uint64_t size_factor_stream = 1;
constexpr std::uint64_t latent_draw_stream = 2;
constexpr std::uint64_t count_stream = 3;

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

// Distinct labels in order of first appearance, and each gene's index into them.
std::pair<std::vector<std::string>, std::vector<std::size_t>> gene_group_index(const ScenarioConfig& scenario) {
    std::vector<std::string> names;
    std::vector<std::size_t> index(scenario.p, 0);
    if (scenario.gene_groups.empty()) {
        return {{"all"}, index};
    }
    for (std::size_t j = 0; j < scenario.p; ++j) {
        const auto& label = scenario.gene_groups[j];
        auto found = std::find(names.begin(), names.end(), label);
        if (found == names.end()) {
            names.push_back(label);
            found = names.end() - 1;
        }
        index[j] = static_cast<std::size_t>(found - names.begin());
    }
    return {names, index};
}

SizeFactorPolicy policy_for(const RunOptions& options, const SimulatedData& data) {
    switch (options.gamma) {
    case GammaPolicy::known:
        return SizeFactorPolicy::from_known(data.size_factors);
    case GammaPolicy::unit:
        return SizeFactorPolicy::unit();
    case GammaPolicy::per_matrix:
        return SizeFactorPolicy::per_matrix();
    case GammaPolicy::train:
        return SizeFactorPolicy::train();
    }
    return SizeFactorPolicy::per_matrix();
}

bool is_cluster_test(Method method) {
    return method == Method::cluster_mean_naive || method == Method::cluster_mean_countsplit;
}

ScenarioConfig replicate_scenario(const ScenarioConfig& scenario, std::size_t replicate) {
    auto copy = scenario;
    copy.seed = derive_seed(scenario.seed, {replicate});
    return copy;
}

}

void ScenarioConfig::validate() const {
    if (n < 2 || p < 1) {
        throw Error(ErrorCode::invalid_config, fmt::format("scenario needs n >= 2 and p >= 1, got n = {}, p = {}", n, p));
    }
    if (beta0.size() != p || beta1.size() != p) {
        throw Error(ErrorCode::invalid_config,
            fmt::format("scenario has {} intercepts and {} slopes for {} genes", beta0.size(), beta1.size(), p));
    }
    if (!gene_groups.empty() && gene_groups.size() != p) {
        throw Error(ErrorCode::invalid_config, fmt::format("{} gene group labels for {} genes", gene_groups.size(), p));
    }
    for (std::size_t j = 0; j < p; ++j) {
        if (!std::isfinite(beta0[j]) || !std::isfinite(beta1[j])) {
            throw Error(ErrorCode::invalid_config, fmt::format("coefficients of gene {} are not finite", j));
        }
    }
    if (overdispersion_b && !(*overdispersion_b > 0 && std::isfinite(*overdispersion_b))) {
        throw Error(ErrorCode::invalid_config, fmt::format("overdispersion b must be positive, got {}", *overdispersion_b));
    }
    if (latent == LatentModel::none) {
        for (auto b : beta1) {
            if (b != 0) {
                throw Error(ErrorCode::invalid_config, "non-zero slopes need a latent variable");
            }
        }
    }
}

SimulatedData generate(const ScenarioConfig& config) {
    config.validate();
    const auto n = config.n;
    const auto p = config.p;
    SimulatedData data;

    data.size_factors = SizeFactors::unit(n);
    if (config.size_factors == SizeFactorModel::gamma_10_10) {
        auto engine = make_engine(derive_seed(config.seed, {size_factor_stream}));
        std::gamma_distribution<double> gamma(10.0, 0.1);
        for (auto& g : data.size_factors.gamma) {
            g = gamma(engine);
        }
    }

    std::vector<double> latent(n, 0.0);
    if (config.latent != LatentModel::none) {
        auto engine = make_engine(derive_seed(config.latent_seed.value_or(config.seed), {latent_draw_stream}));
        if (config.latent == LatentModel::trajectory) {
            std::normal_distribution<double> normal(0.0, 1.0);
            for (auto& l : latent) {
                l = normal(engine);
            }
            double mean = 0;
            for (auto l : latent) {
                mean += l;
            }
            mean /= static_cast<double>(n);
            for (auto& l : latent) {
                l -= mean;
            }
            data.latent = LatentEstimate::trajectory(latent);
        } else {
            std::vector<int> labels(n);
            for (std::size_t i = 0; i < n; ++i) {
                labels[i] = uniform_open01(engine) < 0.5 ? 1 : 0;
                latent[i] = labels[i];
            }
            data.latent = LatentEstimate::clusters(std::move(labels), 2);
        }
    }

    data.expected = RealMatrix(n, p);
    data.counts = CountMatrix(n, p);
    auto engine = make_engine(derive_seed(config.seed, {count_stream}));
    std::optional<std::gamma_distribution<double>> mixing;
    if (config.overdispersion_b) {
        mixing.emplace(*config.overdispersion_b, 1.0 / *config.overdispersion_b);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            const double mean = data.size_factors.gamma[i] * std::exp(config.beta0[j] + config.beta1[j] * latent[i]);
            data.expected(i, j) = mean;
            double rate = mean;
            if (mixing) {
                rate *= (*mixing)(engine);
            }
            if (rate > 0) {
                std::poisson_distribution<Count> poisson(rate);
                data.counts(i, j) = poisson(engine);
            }
        }
    }
    return data;
}

double CalibrationSummary::rejection_rate(double level) const {
    for (const auto& [l, rate] : rejection_rates) {
        if (l == level) {
            return rate;
        }
    }
    throw Error(ErrorCode::invalid_config, fmt::format("no rejection rate recorded at level {}", level));
}

double ks_distance_uniform(std::span<const double> values) {
    if (values.empty()) {
        return 0;
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const auto count = static_cast<double>(sorted.size());
    double distance = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double u = std::clamp(sorted[i], 0.0, 1.0);
        distance = std::max({distance, static_cast<double>(i + 1) / count - u, u - static_cast<double>(i) / count});
    }
    return distance;
}

CalibrationSummary summarize_pvalues(std::vector<double> pvalues, std::size_t missing, std::string group,
    std::size_t max_qq_points) {
    CalibrationSummary summary;
    summary.group = std::move(group);
    summary.n_pvalues = pvalues.size();
    summary.n_missing = missing;
    std::sort(pvalues.begin(), pvalues.end());
    summary.ks_distance = ks_distance_uniform(pvalues);
    for (double level : {0.01, 0.05, 0.1}) {
        const auto rejected = std::upper_bound(pvalues.begin(), pvalues.end(), level) - pvalues.begin();
        const double rate = pvalues.empty() ? 0.0 : static_cast<double>(rejected) / static_cast<double>(pvalues.size());
        summary.rejection_rates.emplace_back(level, rate);
    }
    const auto count = pvalues.size();
    const auto points = std::min(count, max_qq_points);
    for (std::size_t k = 0; k < points; ++k) {
        const auto idx = count == points ? k : static_cast<std::size_t>((static_cast<double>(k) + 0.5) * static_cast<double>(count) / static_cast<double>(points));
        summary.qq_points.push_back({(static_cast<double>(idx) + 0.5) / static_cast<double>(count), pvalues[idx]});
    }
    return summary;
}

CalibrationResult run_calibration(const ScenarioConfig& scenario, const MethodConfig& method, std::size_t replicates,
    const RunOptions& options) {
    if (replicates == 0) {
        throw Error(ErrorCode::invalid_config, "replicates must be at least 1");
    }
    scenario.validate();
    method.validate();
    const bool cluster = is_cluster_test(method.method);
    const auto per_replicate = cluster ? std::size_t{1} : scenario.p;

    CalibrationResult result;
    result.scenario = scenario.name;
    result.method = method;
    result.replicates = replicates;
    result.pvalues.assign(replicates * per_replicate, nan);

    parallel_for(replicates, options.threads, [&](std::size_t r) {
        const auto data = generate(replicate_scenario(scenario, r));
        auto config = method;
        config.seed = derive_seed(method.seed, {r});
        config.threads = 1;
        double* out = result.pvalues.data() + r * per_replicate;
        if (cluster) {
            try {
                out[0] = cluster_mean_test(data.counts, config).p_value;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::degenerate_clusters) {
                    throw;
                }
            }
            return;
        }
        const auto report = run_de(data.counts, policy_for(options, data), config);
        for (const auto& gene : report.results) {
            if (gene.p_value) {
                out[gene.gene_index] = *gene.p_value;
            }
        }
    });

    auto collect = [&](auto&& include) {
        std::vector<double> values;
        std::size_t missing = 0;
        for (std::size_t k = 0; k < result.pvalues.size(); ++k) {
            if (!include(k % per_replicate)) {
                continue;
            }
            if (std::isnan(result.pvalues[k])) {
                ++missing;
            } else {
                values.push_back(result.pvalues[k]);
            }
        }
        return std::pair{std::move(values), missing};
    };

    auto [all, all_missing] = collect([](std::size_t) { return true; });
    result.overall = summarize_pvalues(std::move(all), all_missing, "all");
    if (!cluster && !scenario.gene_groups.empty()) {
        const auto [names, index] = gene_group_index(scenario);
        for (std::size_t g = 0; g < names.size(); ++g) {
            auto [values, missing] = collect([&](std::size_t j) { return index[j] == g; });
            result.groups.push_back(summarize_pvalues(std::move(values), missing, names[g]));
        }
    }
    return result;
}

std::vector<SweepPoint> run_overdispersion_sweep(std::span<const double> b_values, const ScenarioConfig& base,
    const MethodConfig& method, std::size_t replicates, const RunOptions& options) {
    std::vector<SweepPoint> points;
    for (std::size_t k = 0; k < b_values.size(); ++k) {
        auto scenario = base;
        scenario.overdispersion_b = b_values[k];
        scenario.seed = derive_seed(base.seed, {k});
        scenario.name = fmt::format("{}_b{}", base.name, b_values[k]);
        SweepPoint point;
        point.b = b_values[k];
        point.mean_over_b = std::exp(base.beta0.at(0)) / b_values[k];
        auto config = method;
        config.seed = derive_seed(method.seed, {k});
        point.calibration = run_calibration(scenario, config, replicates, options);
        points.push_back(std::move(point));
    }
    return points;
}

PowerCoverageResult run_power_coverage(const PowerCoverageConfig& config, const RunOptions& options) {
    config.scenario.validate();
    if (config.replicates == 0) {
        throw Error(ErrorCode::invalid_config, "replicates must be at least 1");
    }
    if (config.scenario.latent == LatentModel::none) {
        throw Error(ErrorCode::invalid_config, "power and coverage need a latent variable");
    }
    for (auto eps : config.epsilons) {
        if (!(eps > 0 && eps < 1)) {
            throw Error(ErrorCode::invalid_epsilon, fmt::format("epsilon must lie in (0, 1), got {}", eps));
        }
    }
    const auto p = config.scenario.p;
    const auto n_eps = config.epsilons.size();
    const auto [group_names, group_index] = gene_group_index(config.scenario);

    PowerCoverageResult result;
    result.scenario = config.scenario.name;
    result.epsilons = config.epsilons;
    result.group_names = group_names;
    result.genes.resize(config.replicates * n_eps * p);
    result.quality.resize(config.replicates * n_eps);

    parallel_for(config.replicates, options.threads, [&](std::size_t r) {
        auto scenario = config.scenario;
        scenario.seed = derive_seed(config.seed, {r});
        if (!config.slope_values.empty()) {
            const double slope = config.slope_values[r % config.slope_values.size()];
            for (auto& b : scenario.beta1) {
                if (b != 0) {
                    b = slope;
                }
            }
        }
        const auto data = generate(scenario);
        const auto gamma = policy_for(options, data);

        for (std::size_t e = 0; e < n_eps; ++e) {
            auto method = MethodConfig::for_method(Method::count_split);
            method.epsilon = config.epsilons[e];
            method.estimator = config.estimator;
            method.seed = derive_seed(config.seed, {r, e + 1});
            const auto report = de_count_split(data.counts, gamma, method);
            const auto predictor = single_predictor(report.latent.as_predictor());

            auto& quality = result.quality[r * n_eps + e];
            quality.replicate = r;
            quality.epsilon_index = e;
            if (report.latent.kind == LatentKind::trajectory) {
                try {
                    quality.quality = abs_correlation(data.latent->scores, report.latent.scores);
                } catch (const Error&) {
                    quality.quality = nan;
                }
            } else {
                quality.quality = adjusted_rand_index(data.latent->labels, report.latent.labels);
            }

            for (std::size_t j = 0; j < p; ++j) {
                auto& outcome = result.genes[(r * n_eps + e) * p + j];
                outcome.replicate = r;
                outcome.epsilon_index = e;
                outcome.gene = j;
                outcome.group = group_index[j];
                outcome.beta0 = scenario.beta0[j];
                outcome.beta1 = scenario.beta1[j];
                std::vector<double> expected(data.counts.n_cells());
                for (std::size_t i = 0; i < expected.size(); ++i) {
                    expected[i] = (1 - method.epsilon) * data.expected(i, j);
                }
                try {
                    outcome.target = target_parameter(expected, predictor, data.size_factors)[1];
                } catch (const Error&) {
                    outcome.target = nan;
                }
                const auto& gene = report.results[j];
                outcome.converged = gene.status == GeneStatus::ok && std::isfinite(outcome.target);
                if (!outcome.converged) {
                    outcome.p_value = nan;
                    continue;
                }
                outcome.p_value = *gene.p_value;
                outcome.rejected = *gene.p_value <= config.level;
                outcome.ci_covers_target = *gene.ci_lower <= outcome.target && outcome.target <= *gene.ci_upper;
            }
        }
    });

    for (const auto& g : result.genes) {
        result.unconverged += g.converged ? 0 : 1;
    }
    return result;
}

std::vector<PowerBin> binned_power(const PowerCoverageResult& result, std::span<const double> edges,
    std::optional<std::size_t> group) {
    std::vector<PowerBin> bins;
    if (edges.size() < 2) {
        return bins;
    }
    const auto n_bins = edges.size() - 1;
    std::vector<std::size_t> counts(result.epsilons.size() * n_bins, 0);
    std::vector<std::size_t> hits(counts.size(), 0);
    for (const auto& g : result.genes) {
        if (!g.converged || g.beta1 == 0 || (group && g.group != *group)) {
            continue;
        }
        const double t = std::abs(g.target);
        const auto upper = std::upper_bound(edges.begin(), edges.end(), t);
        if (upper == edges.begin() || upper == edges.end()) {
            continue;
        }
        const auto b = static_cast<std::size_t>(upper - edges.begin()) - 1;
        const auto k = g.epsilon_index * n_bins + b;
        ++counts[k];
        hits[k] += g.rejected ? 1 : 0;
    }
    for (std::size_t e = 0; e < result.epsilons.size(); ++e) {
        for (std::size_t b = 0; b < n_bins; ++b) {
            const auto k = e * n_bins + b;
            if (counts[k] == 0) {
                continue;
            }
            bins.push_back({e, edges[b], edges[b + 1], counts[k], static_cast<double>(hits[k]) / static_cast<double>(counts[k])});
        }
    }
    return bins;
}

OverdispersionProfile estimate_overdispersion_profile(const CountMatrix& matrix, const SizeFactors& size_factors,
    const std::optional<LatentEstimate>& latent, std::span<const double> bin_edges) {
    const auto n = matrix.n_cells();
    const auto p = matrix.n_genes();
    if (size_factors.gamma.size() != n) {
        throw Error(ErrorCode::dimension_mismatch, fmt::format("{} size factors for {} cells", size_factors.gamma.size(), n));
    }
    if (latent && latent->size() != n) {
        throw Error(ErrorCode::dimension_mismatch, fmt::format("latent estimate of length {} for {} cells", latent->size(), n));
    }
    const auto predictors = latent ? single_predictor(latent->as_predictor()) : RealMatrix(n, 0);

    OverdispersionProfile profile;
    profile.b_hat.assign(p, nan);
    profile.fitted = RealMatrix(n, p);
    std::fill(profile.fitted.values.begin(), profile.fitted.values.end(), nan);
    profile.bin_edges.assign(bin_edges.begin(), bin_edges.end());
    profile.bin_counts.assign(bin_edges.size() > 1 ? bin_edges.size() - 1 : 0, 0);

    GlmOptions options;
    std::size_t total = 0;
    std::size_t below_one = 0;
    for (std::size_t j = 0; j < p; ++j) {
        GlmFit fit;
        try {
            fit = fit_negbin_glm(matrix.column(j), predictors, size_factors.gamma, options);
        } catch (const Error&) {
            ++profile.failed_genes;
            continue;
        }
        if (!fit.converged || !fit.dispersion) {
            ++profile.failed_genes;
            continue;
        }
        const double b = *fit.dispersion;
        profile.b_hat[j] = b;
        for (std::size_t i = 0; i < n; ++i) {
            const double mean = fit.fitted[i];
            profile.fitted(i, j) = mean;
            const double ratio = mean / b;
            ++total;
            below_one += ratio < 1 ? 1 : 0;
            const auto upper = std::upper_bound(bin_edges.begin(), bin_edges.end(), ratio);
            if (upper != bin_edges.begin() && upper != bin_edges.end()) {
                ++profile.bin_counts[static_cast<std::size_t>(upper - bin_edges.begin()) - 1];
            }
        }
    }
    profile.fraction_below_one = total == 0 ? 0.0 : static_cast<double>(below_one) / static_cast<double>(total);
    return profile;
}

ScenarioConfig null_two_level_scenario(std::size_t n, std::size_t p, std::uint64_t seed) {
    ScenarioConfig s;
    s.name = "null_two_level";
    s.n = n;
    s.p = p;
    s.seed = seed;
    s.beta1.assign(p, 0.0);
    for (std::size_t j = 0; j < p; ++j) {
        const bool low = j < p / 2;
        s.beta0.push_back(low ? 0.0 : std::log(10.0));
        s.gene_groups.push_back(low ? "lambda_1" : "lambda_10");
    }
    return s;
}

ScenarioConfig constant_mean_scenario(double lambda, std::optional<double> b, std::size_t n, std::size_t p, std::uint64_t seed) {
    if (!(lambda > 0)) {
        throw Error(ErrorCode::invalid_config, fmt::format("mean must be positive, got {}", lambda));
    }
    ScenarioConfig s;
    s.name = "constant_mean";
    s.n = n;
    s.p = p;
    s.seed = seed;
    s.beta0.assign(p, std::log(lambda));
    s.beta1.assign(p, 0.0);
    s.overdispersion_b = b;
    return s;
}

ScenarioConfig signal_scenario(LatentModel latent, std::size_t n, std::size_t p, double non_null_fraction, InterceptMix mix,
    std::uint64_t seed) {
    if (latent == LatentModel::none) {
        throw Error(ErrorCode::invalid_config, "signal scenario needs a latent variable");
    }
    if (!(non_null_fraction >= 0 && non_null_fraction <= 1)) {
        throw Error(ErrorCode::invalid_config, fmt::format("non-null fraction must lie in [0, 1], got {}", non_null_fraction));
    }
    ScenarioConfig s;
    s.name = latent == LatentModel::trajectory ? "trajectory" : "clusters";
    s.n = n;
    s.p = p;
    s.seed = seed;
    s.latent = latent;
    s.size_factors = SizeFactorModel::gamma_10_10;
    const auto non_null = static_cast<std::size_t>(std::llround(non_null_fraction * static_cast<double>(p)));
    auto engine = make_engine(derive_seed(seed, {0x1e7ULL}));
    for (std::size_t j = 0; j < p; ++j) {
        bool low = mix == InterceptMix::low;
        if (mix == InterceptMix::mixed) {
            low = uniform_open01(engine) < 0.5;
        }
        s.beta0.push_back(std::log(low ? 3.0 : 25.0));
        s.gene_groups.push_back(low ? "low_intercept" : "high_intercept");
        s.beta1.push_back(j < non_null ? 1.0 : 0.0);
    }
    return s;
}

std::vector<double> linspace(double lo, double hi, std::size_t count) {
    std::vector<double> out;
    for (std::size_t k = 0; k < count; ++k) {
        out.push_back(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1));
    }
    return out;
}

std::string_view to_string(LatentModel model) {
    switch (model) {
    case LatentModel::none:
        return "none";
    case LatentModel::trajectory:
        return "trajectory";
    case LatentModel::clusters:
        return "clusters";
    }
    return "unknown";
}

std::string_view to_string(SizeFactorModel model) {
    return model == SizeFactorModel::gamma_10_10 ? "gamma_10_10" : "unit";
}

LatentModel parse_latent_model(std::string_view name) {
    for (auto model : {LatentModel::none, LatentModel::trajectory, LatentModel::clusters}) {
        if (to_string(model) == name) {
            return model;
        }
    }
    throw Error(ErrorCode::invalid_config, fmt::format("unknown latent model '{}'; valid: none, trajectory, clusters", name));
}

SizeFactorModel parse_size_factor_model(std::string_view name) {
    for (auto model : {SizeFactorModel::unit, SizeFactorModel::gamma_10_10}) {
        if (to_string(model) == name) {
            return model;
        }
    }
    throw Error(ErrorCode::invalid_config, fmt::format("unknown size factor model '{}'; valid: unit, gamma_10_10", name));
}

std::vector<SummaryRow> summary_rows(const CalibrationResult& result, std::string_view method_label) {
    std::vector<SummaryRow> rows;
    const double eps = result.method.epsilon;
    auto emit = [&](const CalibrationSummary& s) {
        auto row = [&](std::string metric, double value) {
            rows.push_back({result.scenario, std::string(method_label), eps, s.group, std::move(metric), value});
        };
        row("ks_distance", s.ks_distance);
        for (const auto& [level, rate] : s.rejection_rates) {
            row(fmt::format("rejection_{}", level), rate);
        }
        row("n_pvalues", static_cast<double>(s.n_pvalues));
        row("n_missing", static_cast<double>(s.n_missing));
    };
    emit(result.overall);
    for (const auto& g : result.groups) {
        emit(g);
    }
    return rows;
}

std::vector<SummaryRow> summary_rows(const PowerCoverageResult& result) {
    std::vector<SummaryRow> rows;
    const auto n_groups = result.group_names.size();
    for (std::size_t e = 0; e < result.epsilons.size(); ++e) {
        const double eps = result.epsilons[e];
        // Per group plus a pooled "all" slot at index n_groups.
        struct Tally {
            std::size_t converged = 0, covered = 0, null = 0, null_rejected = 0, alt = 0, alt_rejected = 0;
            std::vector<double> null_p;
        };
        std::vector<Tally> tallies(n_groups + 1);
        for (const auto& g : result.genes) {
            if (g.epsilon_index != e || !g.converged) {
                continue;
            }
            for (auto* t : {&tallies[g.group], &tallies[n_groups]}) {
                ++t->converged;
                t->covered += g.ci_covers_target ? 1 : 0;
                if (g.beta1 == 0) {
                    ++t->null;
                    t->null_rejected += g.rejected ? 1 : 0;
                    t->null_p.push_back(g.p_value);
                } else {
                    ++t->alt;
                    t->alt_rejected += g.rejected ? 1 : 0;
                }
            }
        }
        auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? nan : static_cast<double>(a) / static_cast<double>(b); };
        for (std::size_t k = 0; k <= n_groups; ++k) {
            const auto& name = k == n_groups ? std::string("all") : result.group_names[k];
            const auto& t = tallies[k];
            auto row = [&](std::string metric, double value) {
                rows.push_back({result.scenario, "count_split", eps, name, std::move(metric), value});
            };
            row("coverage", ratio(t.covered, t.converged));
            row("type1_rate", ratio(t.null_rejected, t.null));
            row("null_ks_distance", ks_distance_uniform(t.null_p));
            row("power", ratio(t.alt_rejected, t.alt));
            row("n_converged", static_cast<double>(t.converged));
        }
        double quality = 0;
        std::size_t count = 0;
        for (const auto& q : result.quality) {
            if (q.epsilon_index == e && std::isfinite(q.quality)) {
                quality += q.quality;
                ++count;
            }
        }
        rows.push_back({result.scenario, "count_split", eps, "all", "latent_quality", count ? quality / static_cast<double>(count) : nan});
    }
    return rows;
}

namespace {

std::string format_number(double value) {
    if (std::isnan(value)) {
        return "NA";
    }
    return fmt::format("{:.17g}", value);
}

std::string_view csv_header = "scenario,method,epsilon,group,metric,value";

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream stream(line);
    while (std::getline(stream, field, ',')) {
        fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

}

std::string format_qq_csv(const std::vector<std::pair<std::string, const CalibrationResult*>>& results) {
    std::string out = fmt::format("# schema_version={}\n", summary_schema_version);
    out += "scenario,method,group,theoretical,empirical\n";
    for (const auto& [label, result] : results) {
        auto emit = [&](const CalibrationSummary& s) {
            for (const auto& q : s.qq_points) {
                out += fmt::format("{},{},{},{},{}\n", result->scenario, label, s.group, format_number(q.theoretical),
                    format_number(q.empirical));
            }
        };
        emit(result->overall);
        for (const auto& g : result->groups) {
            emit(g);
        }
    }
    return out;
}

std::string format_summary_csv(std::span<const SummaryRow> rows) {
    std::string out = fmt::format("# schema_version={}\n", summary_schema_version);
    out += csv_header;
    out += '\n';
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{}\n", r.scenario, r.method, format_number(r.epsilon), r.group, r.metric,
            format_number(r.value));
    }
    return out;
}

std::vector<SummaryRow> parse_summary_csv(const std::string& text) {
    std::istringstream stream(text);
    std::string line;
    if (!std::getline(stream, line) || line.rfind("# schema_version=", 0) != 0) {
        throw Error(ErrorCode::parse_error, "summary CSV must start with a schema_version line");
    }
    int version = 0;
    try {
        version = std::stoi(line.substr(17));
    } catch (...) {
        throw Error(ErrorCode::parse_error, fmt::format("unreadable schema version line '{}'", line));
    }
    if (version != summary_schema_version) {
        throw Error(ErrorCode::invalid_config,
            fmt::format("summary schema version {} does not match supported version {}", version, summary_schema_version));
    }
    if (!std::getline(stream, line) || line != csv_header) {
        throw Error(ErrorCode::parse_error, fmt::format("expected header '{}'", csv_header));
    }
    std::vector<SummaryRow> rows;
    std::size_t line_number = 2;
    auto number = [&](const std::string& field) {
        if (field == "NA") {
            return nan;
        }
        try {
            std::size_t used = 0;
            const double value = std::stod(field, &used);
            if (used != field.size()) {
                throw std::invalid_argument(field);
            }
            return value;
        } catch (...) {
            throw Error(ErrorCode::parse_error, fmt::format("line {}: '{}' is not a number", line_number, field));
        }
    };
    while (std::getline(stream, line)) {
        ++line_number;
        if (line.empty()) {
            continue;
        }
        const auto fields = split_fields(line);
        if (fields.size() != 6) {
            throw Error(ErrorCode::parse_error, fmt::format("line {}: expected 6 fields, got {}", line_number, fields.size()));
        }
        rows.push_back({fields[0], fields[1], number(fields[2]), fields[3], fields[4], number(fields[5])});
    }
    return rows;
}

}
