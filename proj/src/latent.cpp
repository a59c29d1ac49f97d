#include "countsplit/latent.hpp"

#include "countsplit/error.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace countsplit {

LatentEstimate LatentEstimate::trajectory(std::vector<double> scores) {
    LatentEstimate out;
    out.kind = LatentKind::trajectory;
    out.scores = std::move(scores);
    return out;
}

LatentEstimate LatentEstimate::clusters(std::vector<int> labels, int k) {
    LatentEstimate out;
    out.kind = LatentKind::clusters;
    out.labels = std::move(labels);
    out.k = k;
    return out;
}

std::vector<double> LatentEstimate::as_predictor() const {
    if (kind == LatentKind::trajectory) {
        return scores;
    }
    return std::vector<double>(labels.begin(), labels.end());
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> as_eigen(const RealMatrix& m) {
    return {m.values.data(), static_cast<Eigen::Index>(m.n_rows), static_cast<Eigen::Index>(m.n_cols)};
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double d = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = a[j] - b[j];
        d += diff * diff;
    }
    return d;
}

}

PrincipalComponent first_pc(const RealMatrix& matrix, const PowerIterationOptions& options) {
    const auto n = matrix.n_rows;
    const auto p = matrix.n_cols;
    if (n < 2 || p < 1) {
        throw Error(ErrorCode::degenerate_matrix, fmt::format("need at least 2 rows and 1 column, got {} x {}", n, p));
    }

    PrincipalComponent out;
    const auto m = as_eigen(matrix);
    const Eigen::RowVectorXd means = m.colwise().mean();
    const RowMatrix centered = m.rowwise() - means;
    out.column_means.assign(means.data(), means.data() + p);

    if (centered.squaredNorm() <= 1e-24 * std::max(1.0, m.squaredNorm())) {
        throw Error(ErrorCode::degenerate_matrix, "every column is constant");
    }

    // Start from the row with the largest norm, which lies in the row space and is rarely orthogonal to the top axis.
    Eigen::Index start_row = 0;
    centered.rowwise().squaredNorm().maxCoeff(&start_row);
    Eigen::VectorXd v = centered.row(start_row).transpose();
    v.normalize();

    const double scale = 1.0 / static_cast<double>(n - 1);
    const bool use_covariance = p <= n;
    Eigen::MatrixXd cov;
    if (use_covariance) {
        cov = (centered.transpose() * centered) * scale;
    }
    auto apply = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        if (use_covariance) {
            return cov * x;
        }
        return (centered.transpose() * (centered * x)) * scale;
    };

    double lambda = v.dot(apply(v));
    int iter = 0;
    for (; iter < options.max_iterations; ++iter) {
        Eigen::VectorXd w = apply(v);
        const double norm = w.norm();
        if (norm == 0) {
            throw Error(ErrorCode::degenerate_matrix, "power iteration collapsed to zero");
        }
        w /= norm;
        const double next_lambda = w.dot(apply(w));
        const double lambda_change = std::abs(next_lambda - lambda) / std::max(std::abs(next_lambda), 1e-300);
        const double vector_change = (w - v).norm();
        v = std::move(w);
        lambda = next_lambda;
        if (lambda_change < options.eigenvalue_tolerance && vector_change < options.vector_tolerance) {
            break;
        }
    }

    Eigen::Index largest = 0;
    v.cwiseAbs().maxCoeff(&largest);
    if (v(largest) < 0) {
        v = -v;
    }

    const Eigen::VectorXd scores = centered * v;
    out.scores.assign(scores.data(), scores.data() + n);
    out.loading.assign(v.data(), v.data() + p);
    out.eigenvalue = lambda;
    out.iterations = iter;
    return out;
}

std::vector<double> project_rows(const RealMatrix& rows, const PrincipalComponent& pc) {
    if (rows.n_cols != pc.loading.size()) {
        throw Error(ErrorCode::dimension_mismatch,
            fmt::format("rows have {} columns but the axis has {}", rows.n_cols, pc.loading.size()));
    }
    std::vector<double> out(rows.n_rows, 0.0);
    for (std::size_t i = 0; i < rows.n_rows; ++i) {
        auto r = rows.row(i);
        double s = 0;
        for (std::size_t j = 0; j < r.size(); ++j) {
            s += (r[j] - pc.column_means[j]) * pc.loading[j];
        }
        out[i] = s;
    }
    return out;
}

namespace {

struct LloydRun {
    std::vector<int> labels;
    RealMatrix centers;
    double objective = std::numeric_limits<double>::infinity();
    std::vector<double> trace;
};

RealMatrix plus_plus_seeds(const RealMatrix& data, int k, Engine& engine) {
    const auto n = data.n_rows;
    RealMatrix centers(static_cast<std::size_t>(k), data.n_cols);
    auto set_center = [&](int c, std::size_t row) {
        auto src = data.row(row);
        std::copy(src.begin(), src.end(), centers.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(c) * data.n_cols));
    };

    set_center(0, static_cast<std::size_t>(uniform_index(engine, n)));
    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i) {
        nearest[i] = squared_distance(data.row(i), centers.row(0));
    }
    for (int c = 1; c < k; ++c) {
        double total = 0;
        for (auto d : nearest) {
            total += d;
        }
        std::size_t chosen = 0;
        if (total > 0) {
            double target = uniform_open01(engine) * total;
            for (chosen = 0; chosen + 1 < n; ++chosen) {
                target -= nearest[chosen];
                if (target <= 0) {
                    break;
                }
            }
        } else {
            chosen = static_cast<std::size_t>(uniform_index(engine, n));
        }
        set_center(c, chosen);
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(data.row(i), centers.row(static_cast<std::size_t>(c))));
        }
    }
    return centers;
}

double assign_all(const RealMatrix& data, const RealMatrix& centers, std::vector<int>& labels, std::vector<double>& dists) {
    double objective = 0;
    for (std::size_t i = 0; i < data.n_rows; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centers.n_rows; ++c) {
            const double d = squared_distance(data.row(i), centers.row(c));
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        labels[i] = best;
        dists[i] = best_d;
        objective += best_d;
    }
    return objective;
}

// Recompute centroids; an empty cluster takes the point of the largest cluster that is farthest from its centroid.
void update_centers(const RealMatrix& data, int k, std::vector<int>& labels, std::vector<double>& dists, RealMatrix& centers) {
    const auto p = data.n_cols;
    while (true) {
        std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
        for (auto l : labels) {
            ++sizes[static_cast<std::size_t>(l)];
        }
        auto empty = std::find(sizes.begin(), sizes.end(), 0u);
        if (empty == sizes.end()) {
            break;
        }
        const int largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
        std::size_t far = 0;
        double far_d = -1;
        for (std::size_t i = 0; i < data.n_rows; ++i) {
            if (labels[i] == largest && dists[i] > far_d) {
                far_d = dists[i];
                far = i;
            }
        }
        labels[far] = static_cast<int>(empty - sizes.begin());
        dists[far] = 0;
    }

    std::fill(centers.values.begin(), centers.values.end(), 0.0);
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (std::size_t i = 0; i < data.n_rows; ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        counts[c] += 1;
        auto r = data.row(i);
        for (std::size_t j = 0; j < p; ++j) {
            centers(c, j) += r[j];
        }
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
        for (std::size_t j = 0; j < p; ++j) {
            centers(c, j) /= counts[c];
        }
    }
}

double within_ss(const RealMatrix& data, const RealMatrix& centers, const std::vector<int>& labels) {
    double total = 0;
    for (std::size_t i = 0; i < data.n_rows; ++i) {
        total += squared_distance(data.row(i), centers.row(static_cast<std::size_t>(labels[i])));
    }
    return total;
}

LloydRun lloyd(const RealMatrix& data, int k, Engine& engine, int max_iterations) {
    LloydRun run;
    run.centers = plus_plus_seeds(data, k, engine);
    run.labels.assign(data.n_rows, -1);
    std::vector<int> labels(data.n_rows, 0);
    std::vector<double> dists(data.n_rows, 0.0);

    for (int iter = 0; iter < max_iterations; ++iter) {
        assign_all(data, run.centers, labels, dists);
        const bool changed = labels != run.labels;
        update_centers(data, k, labels, dists, run.centers);
        run.labels = labels;
        run.trace.push_back(within_ss(data, run.centers, run.labels));
        if (!changed) {
            break;
        }
    }
    run.objective = run.trace.back();
    return run;
}

}

KmeansResult kmeans_detailed(const RealMatrix& matrix, int k, std::uint64_t seed, const KmeansOptions& options) {
    if (k < 2) {
        throw Error(ErrorCode::too_few_points, fmt::format("k must be at least 2, got {}", k));
    }
    if (matrix.n_rows < static_cast<std::size_t>(k)) {
        throw Error(ErrorCode::too_few_points, fmt::format("{} points cannot form {} clusters", matrix.n_rows, k));
    }

    LloydRun best;
    for (int r = 0; r < std::max(1, options.restarts); ++r) {
        auto engine = make_engine(derive_seed(seed, {static_cast<std::uint64_t>(r)}));
        auto run = lloyd(matrix, k, engine, options.max_iterations);
        if (run.objective < best.objective) {
            best = std::move(run);
        }
    }

    // Renumber by first appearance.
    std::vector<int> relabel(static_cast<std::size_t>(k), -1);
    int next = 0;
    for (auto l : best.labels) {
        if (relabel[static_cast<std::size_t>(l)] < 0) {
            relabel[static_cast<std::size_t>(l)] = next++;
        }
    }
    for (auto& r : relabel) {
        if (r < 0) {
            r = next++;
        }
    }
    KmeansResult out;
    std::vector<int> labels(best.labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = relabel[static_cast<std::size_t>(best.labels[i])];
    }
    out.centers = RealMatrix(static_cast<std::size_t>(k), matrix.n_cols);
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
        auto src = best.centers.row(c);
        std::copy(src.begin(), src.end(),
            out.centers.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(relabel[c]) * matrix.n_cols));
    }
    out.estimate = LatentEstimate::clusters(std::move(labels), k);
    out.objective = best.objective;
    out.objective_trace = std::move(best.trace);
    return out;
}

LatentEstimate kmeans(const RealMatrix& matrix, int k, std::uint64_t seed, const KmeansOptions& options) {
    return kmeans_detailed(matrix, k, seed, options).estimate;
}

std::vector<int> assign_to_centers(const RealMatrix& rows, const RealMatrix& centers) {
    if (rows.n_cols != centers.n_cols) {
        throw Error(ErrorCode::dimension_mismatch, "rows and centers have different widths");
    }
    std::vector<int> labels(rows.n_rows);
    std::vector<double> dists(rows.n_rows);
    assign_all(rows, centers, labels, dists);
    return labels;
}

double abs_correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw Error(ErrorCode::dimension_mismatch, "correlation needs two vectors of equal length >= 2");
    }
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0, sbb = 0, sab = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0 || sbb <= 0) {
        throw Error(ErrorCode::constant_input, "correlation is undefined for a constant vector");
    }
    return std::min(1.0, std::abs(sab) / std::sqrt(saa * sbb));
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::dimension_mismatch, "labelings have different lengths");
    }
    std::map<std::pair<int, int>, double> table;
    std::map<int, double> rows, cols;
    for (std::size_t i = 0; i < a.size(); ++i) {
        table[{a[i], b[i]}] += 1;
        rows[a[i]] += 1;
        cols[b[i]] += 1;
    }
    auto choose2 = [](double x) { return x * (x - 1) / 2; };
    double index = 0, sum_rows = 0, sum_cols = 0;
    for (const auto& [key, count] : table) {
        index += choose2(count);
    }
    for (const auto& [key, count] : rows) {
        sum_rows += choose2(count);
    }
    for (const auto& [key, count] : cols) {
        sum_cols += choose2(count);
    }
    const double total = choose2(static_cast<double>(a.size()));
    const double expected = total > 0 ? sum_rows * sum_cols / total : 0;
    const double max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index == expected) {
        return 1.0;
    }
    return (index - expected) / (max_index - expected);
}

}
