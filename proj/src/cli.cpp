#include "countsplit/cli.hpp"

#include "countsplit/count_matrix.hpp"
#include "countsplit/parallel.hpp"
#include "countsplit/pipelines.hpp"
#include "countsplit/simulation.hpp"
#include "countsplit/splitting.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

namespace countsplit::cli {

namespace {

using Json = nlohmann::ordered_json;

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::io_error, fmt::format("cannot open '{}'", path.string()));
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::io_error, fmt::format("cannot write '{}'", path.string()));
    }
    out << text;
    if (!out) {
        throw Error(ErrorCode::io_error, fmt::format("failed writing '{}'", path.string()));
    }
}

// JSON config values become flags placed before the user's own, so later command-line flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::optional<std::string> config_path;
    for (std::size_t k = 0; k < args.size(); ++k) {
        if (args[k] == "--config" && k + 1 < args.size()) {
            config_path = args[k + 1];
        } else if (args[k].rfind("--config=", 0) == 0) {
            config_path = args[k].substr(9);
        }
    }
    if (!config_path || args.empty()) {
        return args;
    }
    Json config;
    try {
        config = Json::parse(read_text(*config_path));
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::invalid_config, fmt::format("config file '{}' is not valid JSON: {}", *config_path, e.what()));
    }
    if (!config.is_object()) {
        throw Error(ErrorCode::invalid_config, fmt::format("config file '{}' must hold a JSON object", *config_path));
    }
    std::vector<std::string> injected;
    auto scalar = [&](const std::string& key, const Json& value) {
        if (value.is_string()) {
            return value.get<std::string>();
        }
        if (value.is_number() || value.is_boolean()) {
            return value.dump();
        }
        throw Error(ErrorCode::invalid_config, fmt::format("config key '{}' must hold a string, number or boolean", key));
    };
    for (const auto& [key, value] : config.items()) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (value.is_boolean()) {
            injected.push_back(flag + "=" + value.dump());
        } else if (value.is_array()) {
            injected.push_back(flag);
            for (const auto& item : value) {
                injected.push_back(scalar(key, item));
            }
        } else {
            injected.push_back(flag);
            injected.push_back(scalar(key, value));
        }
    }
    std::vector<std::string> expanded{args[0]};
    expanded.insert(expanded.end(), injected.begin(), injected.end());
    expanded.insert(expanded.end(), args.begin() + 1, args.end());
    return expanded;
}

std::string extension_for(MatrixFormat format) {
    return format == MatrixFormat::matrix_market ? ".mtx" : ".csv";
}

int resolve_threads(int requested) {
    return requested > 0 ? requested : threads_from_environment();
}

struct Artifacts {
    std::vector<std::string> paths;

    void write(const std::string& path, const std::string& text) {
        write_text(path, text);
        paths.push_back(path);
    }
};

void write_manifest(const std::string& prefix, const std::string& command, const Json& config, std::uint64_t seed,
    Artifacts& artifacts, std::chrono::steady_clock::time_point start) {
    const auto path = prefix + ".manifest.json";
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    Json manifest = {
        {"schema_version", manifest_schema_version},
        {"command", command},
        {"config", config},
        {"seed", seed},
        {"artifact_paths", artifacts.paths},
        {"wall_time_seconds", seconds},
    };
    manifest["artifact_paths"].push_back(path);
    write_text(path, manifest.dump(2) + "\n");
}

SizeFactors load_size_factors(const std::string& path, std::size_t n_cells) {
    std::istringstream stream(read_text(path));
    std::string line;
    SizeFactors factors;
    std::size_t line_number = 0;
    while (std::getline(stream, line)) {
        ++line_number;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        try {
            std::size_t used = 0;
            const double value = std::stod(line, &used);
            if (used != line.size()) {
                throw std::invalid_argument(line);
            }
            factors.gamma.push_back(value);
        } catch (const std::exception&) {
            if (line_number == 1) {
                continue;
            }
            throw Error(ErrorCode::parse_error, fmt::format("{}:{}: '{}' is not a number", path, line_number, line));
        }
    }
    if (factors.gamma.size() != n_cells) {
        throw Error(ErrorCode::dimension_mismatch,
            fmt::format("{} size factors in '{}' for {} cells", factors.gamma.size(), path, n_cells));
    }
    for (auto g : factors.gamma) {
        if (!(g > 0) || !std::isfinite(g)) {
            throw Error(ErrorCode::invalid_config, fmt::format("size factors in '{}' must be positive", path));
        }
    }
    return factors;
}

std::string format_number(double value) {
    if (std::isnan(value)) {
        return "NA";
    }
    return fmt::format("{:.17g}", value);
}

Json method_json(const MethodConfig& config) {
    return {
        {"method", to_string(config.method)},
        {"estimator", to_string(config.estimator)},
        {"family", to_string(config.family)},
        {"epsilon", config.epsilon},
        {"fraction", config.fraction},
        {"resamples", config.resamples},
        {"permuted_genes", config.permuted_genes},
        {"plus_one", config.plus_one},
        {"ci_level", config.ci_level},
        {"pseudocount", config.pseudocount},
        {"seed", config.seed},
    };
}

// split

struct SplitArgs {
    std::string input;
    double epsilon = 0.5;
    std::uint64_t seed = 0;
    std::string out_prefix;
};

void run_split(const SplitArgs& args) {
    const auto start = std::chrono::steady_clock::now();
    if (!(args.epsilon > 0 && args.epsilon < 1)) {
        throw Error(ErrorCode::invalid_epsilon, fmt::format("epsilon must lie in (0, 1), got {}", args.epsilon));
    }
    const auto format = format_from_path(args.input);
    const auto matrix = load_matrix(args.input, format);
    const auto split = count_split(matrix, args.epsilon, args.seed);

    Artifacts artifacts;
    const auto ext = extension_for(format);
    for (const auto& [role, m] : {std::pair{"train", &split.train}, std::pair{"test", &split.test}}) {
        const auto path = fmt::format("{}.{}{}", args.out_prefix, role, ext);
        save_matrix(*m, path, format);
        artifacts.paths.push_back(path);
    }
    const Json config = {
        {"input", args.input},
        {"format", format == MatrixFormat::matrix_market ? "matrix_market" : "csv_dense"},
        {"epsilon", args.epsilon},
        {"seed", args.seed},
        {"out_prefix", args.out_prefix},
        {"n_cells", matrix.n_cells()},
        {"n_genes", matrix.n_genes()},
    };
    write_manifest(args.out_prefix, "split", config, args.seed, artifacts, start);
}

// de

struct DeArgs {
    std::string input;
    std::string method = "count_split";
    std::string estimator = "pc1";
    std::string family = "poisson";
    std::string gamma = "per_matrix";
    std::string size_factors;
    double epsilon = 0.5;
    std::optional<double> fraction;
    int resamples = 100;
    int permuted_genes = 10;
    bool plus_one = false;
    double ci_level = 0.95;
    std::uint64_t seed = 0;
    std::string out_prefix;
    bool compare = false;
    int threads = 0;
};

std::string cluster_test_csv(const ClusterMeanTest& test) {
    std::string out = fmt::format("# schema_version={}\n", de_report_schema_version);
    out += "statistic,difference_norm,sigma,p_value,cluster_size_0,cluster_size_1\n";
    out += fmt::format("{},{},{},{},{},{}\n", format_number(test.statistic), format_number(test.difference_norm),
        format_number(test.sigma), format_number(test.p_value), test.cluster_sizes[0], test.cluster_sizes[1]);
    return out;
}

std::string comparison_csv(const std::vector<std::pair<Method, DeReport>>& reports, const CountMatrix& matrix) {
    std::string out = fmt::format("# schema_version={}\n", de_report_schema_version);
    out += "gene,name";
    for (const auto& [method, report] : reports) {
        out += fmt::format(",p_{}", to_string(method));
    }
    out += '\n';
    for (std::size_t j = 0; j < matrix.n_genes(); ++j) {
        out += fmt::format("{},{}", j, matrix.gene_names() ? (*matrix.gene_names())[j] : std::string());
        for (const auto& [method, report] : reports) {
            const auto& p = report.results[j].p_value;
            out += "," + (p ? format_number(*p) : std::string("NA"));
        }
        out += '\n';
    }
    return out;
}

void run_de_command(const DeArgs& args) {
    const auto start = std::chrono::steady_clock::now();
    auto config = MethodConfig::for_method(parse_method(args.method));
    config.estimator = parse_estimator(args.estimator);
    config.family = parse_family(args.family);
    config.epsilon = args.epsilon;
    if (args.fraction) {
        config.fraction = *args.fraction;
    }
    config.resamples = args.resamples;
    config.permuted_genes = args.permuted_genes;
    config.plus_one = args.plus_one;
    config.ci_level = args.ci_level;
    config.seed = args.seed;
    config.threads = resolve_threads(args.threads);
    auto policy = SizeFactorPolicy{parse_gamma_policy(args.gamma), std::nullopt};
    if (policy.policy == GammaPolicy::known && args.size_factors.empty()) {
        throw Error(ErrorCode::invalid_config, "--gamma known requires --size-factors");
    }
    config.validate();
    if (args.compare) {
        auto check = config;
        check.method = Method::count_split;
        check.validate();
    }

    const auto matrix = load_matrix(args.input, format_from_path(args.input));
    if (!args.size_factors.empty()) {
        policy.known = load_size_factors(args.size_factors, matrix.n_cells());
    }

    Json echo = {
        {"input", args.input},
        {"gamma", to_string(policy.policy)},
        {"size_factors", args.size_factors},
        {"compare", args.compare},
        {"threads", config.threads},
        {"out_prefix", args.out_prefix},
        {"method_config", method_json(config)},
    };
    Artifacts artifacts;

    if (args.compare) {
        // Full double dip, count split and test double dip on one shared split, with offsets as in the comparison design.
        std::vector<std::pair<Method, DeReport>> reports;
        const std::array<std::pair<Method, GammaPolicy>, 3> plan{{
            {Method::double_dip, GammaPolicy::per_matrix},
            {Method::count_split, GammaPolicy::train},
            {Method::test_double_dip, GammaPolicy::per_matrix},
        }};
        for (const auto& [method, default_policy] : plan) {
            auto run_config = config;
            run_config.method = method;
            auto run_policy = policy;
            if (policy.policy == GammaPolicy::per_matrix || policy.policy == GammaPolicy::train) {
                run_policy.policy = default_policy;
            }
            auto report = run_de(matrix, run_policy, run_config);
            artifacts.write(fmt::format("{}.{}.csv", args.out_prefix, to_string(method)), format_de_report_csv(report, matrix.gene_names()));
            reports.emplace_back(method, std::move(report));
        }
        artifacts.write(args.out_prefix + ".comparison.csv", comparison_csv(reports, matrix));
        echo["methods"] = {"double_dip", "count_split", "test_double_dip"};
    } else if (config.method == Method::cluster_mean_naive || config.method == Method::cluster_mean_countsplit) {
        const auto test = cluster_mean_test(matrix, config);
        artifacts.write(args.out_prefix + ".csv", cluster_test_csv(test));
    } else {
        const auto report = run_de(matrix, policy, config);
        artifacts.write(args.out_prefix + ".csv", format_de_report_csv(report, matrix.gene_names()));
        artifacts.write(args.out_prefix + ".json", format_de_report_json(report));
    }
    write_manifest(args.out_prefix, "de", echo, config.seed, artifacts, start);
}

// simulate

struct SimulateArgs {
    std::string preset;
    std::string scenario;
    std::optional<std::size_t> replicates;
    std::size_t resampling_replicates = 200;
    std::uint64_t seed = 0;
    std::string out_prefix;
    bool full_size = false;
    int threads = 0;
};

const std::vector<double> power_bin_edges{0.0, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2, std::numeric_limits<double>::infinity()};

std::string power_csv(const std::vector<const PowerCoverageResult*>& results) {
    std::string out = fmt::format("# schema_version={}\n", summary_schema_version);
    out += "scenario,epsilon,group,bin_lower,bin_upper,count,rejection_rate\n";
    for (const auto* result : results) {
        std::vector<std::pair<std::string, std::optional<std::size_t>>> groups{{"all", std::nullopt}};
        for (std::size_t g = 0; g < result->group_names.size(); ++g) {
            groups.emplace_back(result->group_names[g], g);
        }
        for (const auto& [name, group] : groups) {
            for (const auto& bin : binned_power(*result, power_bin_edges, group)) {
                out += fmt::format("{},{},{},{},{},{},{}\n", result->scenario, format_number(result->epsilons[bin.epsilon_index]),
                    name, format_number(bin.lower), format_number(bin.upper), bin.count, format_number(bin.rejection_rate));
            }
        }
    }
    return out;
}

ScenarioConfig scenario_from_json(const Json& doc) {
    ScenarioConfig s;
    try {
        s.name = doc.value("name", std::string("custom"));
        s.n = doc.at("n").get<std::size_t>();
        s.p = doc.at("p").get<std::size_t>();
        s.latent = parse_latent_model(doc.value("latent", std::string("none")));
        auto per_gene = [&](const char* key, double fallback) {
            if (!doc.contains(key)) {
                return std::vector<double>(s.p, fallback);
            }
            const auto& v = doc.at(key);
            return v.is_array() ? v.get<std::vector<double>>() : std::vector<double>(s.p, v.get<double>());
        };
        s.beta0 = per_gene("beta0", 0.0);
        s.beta1 = per_gene("beta1", 0.0);
        if (doc.contains("overdispersion_b") && !doc.at("overdispersion_b").is_null()) {
            s.overdispersion_b = doc.at("overdispersion_b").get<double>();
        }
        s.size_factors = parse_size_factor_model(doc.value("size_factors", std::string("unit")));
        if (doc.contains("gene_groups")) {
            s.gene_groups = doc.at("gene_groups").get<std::vector<std::string>>();
        }
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::invalid_config, fmt::format("scenario file: {}", e.what()));
    }
    s.validate();
    return s;
}

Json scenario_json(const ScenarioConfig& s) {
    Json doc = {
        {"name", s.name},
        {"n", s.n},
        {"p", s.p},
        {"latent", to_string(s.latent)},
        {"beta0", s.beta0},
        {"beta1", s.beta1},
        {"overdispersion_b", s.overdispersion_b ? Json(*s.overdispersion_b) : Json(nullptr)},
        {"size_factors", to_string(s.size_factors)},
        {"gene_groups", s.gene_groups},
    };
    return doc;
}

void run_simulate(const SimulateArgs& args) {
    const auto start = std::chrono::steady_clock::now();
    if (args.preset.empty() == args.scenario.empty()) {
        throw Error(ErrorCode::invalid_config, "give exactly one of --preset or --scenario");
    }
    if (args.replicates && *args.replicates == 0) {
        throw Error(ErrorCode::invalid_config, "--replicates must be at least 1");
    }
    if (args.resampling_replicates == 0) {
        throw Error(ErrorCode::invalid_config, "--resampling-replicates must be at least 1");
    }
    RunOptions options;
    options.threads = resolve_threads(args.threads);

    Json echo = {
        {"preset", args.preset},
        {"scenario_file", args.scenario},
        {"seed", args.seed},
        {"full_size", args.full_size},
        {"threads", options.threads},
        {"out_prefix", args.out_prefix},
    };
    Artifacts artifacts;
    std::vector<SummaryRow> rows;

    auto calibrate = [&](const ScenarioConfig& scenario, const std::vector<MethodConfig>& methods, std::size_t replicates,
                         std::size_t resampling) {
        std::vector<CalibrationResult> results;
        Json runs = Json::array();
        for (std::size_t k = 0; k < methods.size(); ++k) {
            auto method = methods[k];
            method.seed = derive_seed(args.seed, {k, 1});
            const bool slow = method.method == Method::jackstraw_full || method.method == Method::jackstraw_efficient ||
                method.method == Method::pseudotime_de;
            const auto reps = slow ? std::min(replicates, resampling) : replicates;
            auto scenario_k = scenario;
            scenario_k.seed = derive_seed(args.seed, {k, 0});
            results.push_back(run_calibration(scenario_k, method, reps, options));
            auto run = method_json(method);
            run["replicates"] = reps;
            runs.push_back(run);
        }
        std::vector<std::pair<std::string, const CalibrationResult*>> labelled;
        for (const auto& r : results) {
            labelled.emplace_back(std::string(to_string(r.method.method)), &r);
            const auto part = summary_rows(r, to_string(r.method.method));
            rows.insert(rows.end(), part.begin(), part.end());
        }
        artifacts.write(args.out_prefix + ".qq.csv", format_qq_csv(labelled));
        echo["scenario"] = scenario_json(scenario);
        echo["runs"] = runs;
    };

    const auto& preset = args.preset;
    if (!args.scenario.empty()) {
        Json doc;
        try {
            doc = Json::parse(read_text(args.scenario));
        } catch (const Json::parse_error& e) {
            throw Error(ErrorCode::invalid_config, fmt::format("scenario file '{}' is not valid JSON: {}", args.scenario, e.what()));
        }
        const auto scenario = scenario_from_json(doc);
        std::vector<MethodConfig> methods;
        const auto names = doc.value("methods", std::vector<std::string>{"count_split"});
        for (const auto& name : names) {
            auto method = MethodConfig::for_method(parse_method(name));
            method.epsilon = doc.value("epsilon", method.epsilon);
            method.estimator = parse_estimator(doc.value("estimator", std::string("pc1")));
            method.family = parse_family(doc.value("family", std::string("poisson")));
            method.resamples = doc.value("resamples", method.resamples);
            method.permuted_genes = doc.value("permuted_genes", method.permuted_genes);
            method.validate();
            methods.push_back(method);
        }
        calibrate(scenario, methods, args.replicates.value_or(200), args.resampling_replicates);
    } else if (preset == "fig2a") {
        std::vector<MethodConfig> methods;
        for (auto m : {Method::count_split, Method::double_dip, Method::cell_split, Method::jackstraw_efficient, Method::pseudotime_de}) {
            methods.push_back(MethodConfig::for_method(m));
        }
        calibrate(null_two_level_scenario(), methods, args.replicates.value_or(2000), args.resampling_replicates);
    } else if (preset == "fig2b") {
        const std::vector<double> b_values{50, 10, 5, 0.5};
        auto method = MethodConfig::for_method(Method::count_split);
        method.family = Family::negative_binomial;
        method.seed = derive_seed(args.seed, {1});
        auto base = constant_mean_scenario(5, std::nullopt);
        base.name = "overdispersed";
        base.seed = derive_seed(args.seed, {0});
        const auto sweep = run_overdispersion_sweep(b_values, base, method, args.replicates.value_or(500), options);
        std::vector<std::pair<std::string, const CalibrationResult*>> labelled;
        for (const auto& point : sweep) {
            labelled.emplace_back(fmt::format("count_split_lambda_over_b_{}", point.mean_over_b), &point.calibration);
            const auto part = summary_rows(point.calibration, labelled.back().first);
            rows.insert(rows.end(), part.begin(), part.end());
        }
        artifacts.write(args.out_prefix + ".qq.csv", format_qq_csv(labelled));
        echo["b_values"] = b_values;
        echo["method_config"] = method_json(method);
    } else if (preset == "fig3" || preset == "table1") {
        const std::size_t n = args.full_size ? 2700 : 500;
        const std::size_t p = args.full_size ? 2000 : 200;
        const std::size_t slopes = args.full_size ? 15 : 5;
        const std::size_t default_reps = args.full_size ? 1500 : 200;
        std::vector<PowerCoverageResult> results;
        Json runs = Json::array();
        for (auto latent : {LatentModel::trajectory, LatentModel::clusters}) {
            PowerCoverageConfig config;
            config.scenario = signal_scenario(latent, n, p, 0.1, InterceptMix::mixed, derive_seed(args.seed, {0}));
            config.slope_values = linspace(0.18, 3.0, slopes);
            config.epsilons = preset == "table1" ? std::vector<double>{0.5} : std::vector<double>{0.2, 0.5, 0.8};
            config.replicates = args.replicates.value_or(default_reps);
            config.estimator = latent == LatentModel::trajectory ? Estimator::pc1_trajectory : Estimator::kmeans2;
            config.seed = derive_seed(args.seed, {static_cast<std::uint64_t>(latent)});
            results.push_back(run_power_coverage(config, options));
            runs.push_back({
                {"scenario", scenario_json(config.scenario)},
                {"epsilons", config.epsilons},
                {"slope_values", config.slope_values},
                {"replicates", config.replicates},
                {"estimator", to_string(config.estimator)},
            });
        }
        std::vector<const PowerCoverageResult*> pointers;
        for (const auto& r : results) {
            const auto part = summary_rows(r);
            rows.insert(rows.end(), part.begin(), part.end());
            pointers.push_back(&r);
        }
        artifacts.write(args.out_prefix + ".power.csv", power_csv(pointers));
        echo["runs"] = runs;
    } else if (preset == "appendixC") {
        auto scenario = constant_mean_scenario(5, std::nullopt);
        scenario.name = "poisson5";
        std::vector<MethodConfig> methods{MethodConfig::for_method(Method::cluster_mean_naive),
            MethodConfig::for_method(Method::cluster_mean_countsplit)};
        calibrate(scenario, methods, args.replicates.value_or(1000), args.resampling_replicates);
    } else {
        throw Error(ErrorCode::invalid_config,
            fmt::format("unknown preset '{}'; valid presets: fig2a, fig2b, fig3, table1, appendixC", preset));
    }
    echo["replicates"] = args.replicates ? Json(*args.replicates) : Json("preset default");
    echo["resampling_replicates"] = args.resampling_replicates;
    artifacts.write(args.out_prefix + ".summary.csv", format_summary_csv(rows));
    write_manifest(args.out_prefix, "simulate", echo, args.seed, artifacts, start);
}

// report

struct ReportArgs {
    std::vector<std::string> inputs;
    std::string output;
};

void run_report(const ReportArgs& args) {
    if (args.inputs.empty()) {
        throw Error(ErrorCode::invalid_config, "report needs at least one input summary");
    }
    using Key = std::tuple<std::string, std::string, double, std::string, std::string>;
    std::map<Key, double> merged;
    for (const auto& path : args.inputs) {
        for (const auto& row : parse_summary_csv(read_text(path))) {
            const Key key{row.method, row.scenario, row.epsilon, row.group, row.metric};
            const auto [it, inserted] = merged.emplace(key, row.value);
            const bool same = it->second == row.value || (std::isnan(it->second) && std::isnan(row.value));
            if (!inserted && !same) {
                throw Error(ErrorCode::invalid_config,
                    fmt::format("'{}' reports {} = {} for ({}, {}, {}, {}), conflicting with an earlier input", path,
                        row.metric, row.value, row.method, row.scenario, row.epsilon, row.group));
            }
        }
    }
    std::vector<SummaryRow> rows;
    for (const auto& [key, value] : merged) {
        const auto& [method, scenario, epsilon, group, metric] = key;
        rows.push_back({scenario, method, epsilon, group, metric, value});
    }
    write_text(args.output, format_summary_csv(rows));
}

}

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::io_error:
    case ErrorCode::parse_error:
        return exit_io;
    case ErrorCode::dimension_mismatch:
    case ErrorCode::invalid_epsilon:
    case ErrorCode::invalid_config:
    case ErrorCode::invalid_fraction:
    case ErrorCode::too_few_genes:
        return exit_config;
    default:
        return exit_numeric;
    }
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Count splitting for inference after latent variable estimation"};
    app.name("countsplit");
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    std::string config_path;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON file of flag values; command-line flags take precedence");
    };

    SplitArgs split_args;
    auto* split = app.add_subcommand("split", "Split a count matrix into train and test matrices");
    split->add_option("--input", split_args.input, "Count matrix (.csv dense or .mtx MatrixMarket)")->required();
    split->add_option("--epsilon", split_args.epsilon, "Train fraction in (0, 1)")->capture_default_str();
    split->add_option("--seed", split_args.seed, "Random seed")->capture_default_str();
    split->add_option("--out-prefix", split_args.out_prefix, "Output path prefix")->required();
    add_config(split);

    DeArgs de_args;
    auto* de = app.add_subcommand("de", "Per-gene differential expression along an estimated latent variable");
    de->add_option("--input", de_args.input, "Count matrix (.csv dense or .mtx MatrixMarket)")->required();
    de->add_option("--method", de_args.method,
        "count_split, double_dip, test_double_dip, cell_split, gene_split, jackstraw_full, jackstraw_efficient, "
        "pseudotime_de, cluster_mean_naive, cluster_mean_countsplit")
        ->capture_default_str();
    de->add_option("--estimator", de_args.estimator, "pc1 or kmeans2")->capture_default_str();
    de->add_option("--family", de_args.family, "poisson or negative_binomial")->capture_default_str();
    de->add_option("--gamma", de_args.gamma, "Size factors: known, unit, per_matrix or train")->capture_default_str();
    de->add_option("--size-factors", de_args.size_factors, "File with one size factor per cell (for --gamma known)");
    de->add_option("--epsilon", de_args.epsilon, "Count splitting train fraction")->capture_default_str();
    de->add_option("--fraction", de_args.fraction, "Cell fraction for cell splitting (0.5) or PseudotimeDE subsamples (0.8)");
    de->add_option("--resamples", de_args.resamples, "Resamples for jackstraw and PseudotimeDE")->capture_default_str();
    de->add_option("--permuted-genes", de_args.permuted_genes, "Genes permuted per resample (efficient jackstraw)")
        ->capture_default_str();
    de->add_flag("--plus-one", de_args.plus_one, "Report resampling p-values as (1 + hits) / (1 + total)");
    de->add_option("--ci-level", de_args.ci_level, "Wald confidence level")->capture_default_str();
    de->add_option("--seed", de_args.seed, "Random seed")->capture_default_str();
    de->add_option("--out-prefix", de_args.out_prefix, "Output path prefix")->required();
    de->add_flag("--compare", de_args.compare, "Run full double dipping, count splitting and test double dipping");
    de->add_option("--threads", de_args.threads, "Worker threads (default: COUNTSPLIT_THREADS or 1)");
    add_config(de);

    SimulateArgs sim_args;
    auto* simulate = app.add_subcommand("simulate", "Run simulation presets or a scenario file");
    simulate->add_option("--preset", sim_args.preset, "fig2a, fig2b, fig3, table1 or appendixC");
    simulate->add_option("--scenario", sim_args.scenario, "JSON scenario file");
    simulate->add_option("--replicates", sim_args.replicates, "Replicates (default depends on the preset)");
    simulate->add_option("--resampling-replicates", sim_args.resampling_replicates,
        "Replicate cap for jackstraw and PseudotimeDE")
        ->capture_default_str();
    simulate->add_option("--seed", sim_args.seed, "Random seed")->capture_default_str();
    simulate->add_option("--out-prefix", sim_args.out_prefix, "Output path prefix")->required();
    simulate->add_flag("--full-size", sim_args.full_size, "Use full-size power and coverage scenarios");
    simulate->add_option("--threads", sim_args.threads, "Worker threads (default: COUNTSPLIT_THREADS or 1)");
    add_config(simulate);

    ReportArgs report_args;
    auto* report = app.add_subcommand("report", "Merge summary CSVs into one comparison table");
    report->add_option("--inputs", report_args.inputs, "Summary CSV files")->required()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    report->add_option("--output", report_args.output, "Merged CSV path")->required();
    add_config(report);

    try {
        auto args = expand_config(raw_args);
        std::reverse(args.begin(), args.end());
        app.parse(args);
        if (split->parsed()) {
            run_split(split_args);
        } else if (de->parsed()) {
            run_de_command(de_args);
        } else if (simulate->parsed()) {
            run_simulate(sim_args);
        } else if (report->parsed()) {
            run_report(report_args);
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? exit_ok : exit_config;
    } catch (const Error& e) {
        err << "countsplit: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "countsplit: " << e.what() << "\n";
        return exit_numeric;
    }
    return exit_ok;
}

}
