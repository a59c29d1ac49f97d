#include "countsplit/error.hpp"
#include "countsplit/rng.hpp"
#include "countsplit/splitting.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace countsplit;

namespace {

CountMatrix poisson_matrix(std::size_t n, std::size_t p, double lambda, std::uint64_t seed) {
    std::mt19937_64 engine(seed);
    std::poisson_distribution<Count> poisson(lambda);
    CountMatrix m(n, p);
    for (auto& v : m.values()) {
        v = poisson(engine);
    }
    return m;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// log of the Binomial(n, p) probability of k, from log-gamma.
double binomial_log_pmf(std::uint64_t n, std::uint64_t k, double p) {
    const double nn = static_cast<double>(n);
    const double kk = static_cast<double>(k);
    return std::lgamma(nn + 1) - std::lgamma(kk + 1) - std::lgamma(nn - kk + 1) + kk * std::log(p) + (nn - kk) * std::log1p(-p);
}

// Pearson chi-square of `draws` Binomial(n, p) samples against the exact pmf, pooling cells with expected count < 5.
std::pair<double, int> binomial_chi_square(std::uint64_t n, double p, std::size_t draws, std::uint64_t seed) {
    auto engine = make_engine(seed);
    std::vector<std::size_t> observed(n + 1, 0);
    for (std::size_t d = 0; d < draws; ++d) {
        const auto k = sample_binomial(engine, n, p);
        REQUIRE(k <= n);
        ++observed[k];
    }
    double chi = 0;
    int cells = 0;
    double pooled_obs = 0, pooled_exp = 0;
    for (std::uint64_t k = 0; k <= n; ++k) {
        const double expected = static_cast<double>(draws) * std::exp(binomial_log_pmf(n, k, p));
        pooled_obs += static_cast<double>(observed[k]);
        pooled_exp += expected;
        if (pooled_exp >= 5) {
            chi += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
            ++cells;
            pooled_obs = pooled_exp = 0;
        }
    }
    if (pooled_exp > 0) {
        chi += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / std::max(pooled_exp, 1e-300);
        ++cells;
    }
    return {chi, cells - 1};
}

}

TEST_CASE("binomial sampler matches the exact pmf in both regimes") {
    struct Case {
        std::uint64_t n;
        double p;
    };
    // Inversion regime, acceptance regime, and p above one half.
    for (const auto& c : {Case{10, 0.3}, Case{40, 0.5}, Case{1000, 0.25}, Case{5000, 0.9}, Case{200, 0.97}}) {
        const auto [chi, dof] = binomial_chi_square(c.n, c.p, 200000, 17 + c.n);
        // Upper 0.999 quantile of chi-square is below dof + 4.4 sqrt(2 dof) + 10 for these dof.
        CHECK_MESSAGE(chi < dof + 4.4 * std::sqrt(2.0 * dof) + 10, "n=", c.n, " p=", c.p, " chi=", chi, " dof=", dof);
    }
}

TEST_CASE("binomial sampler handles degenerate probabilities and zero trials") {
    auto engine = make_engine(1);
    CHECK(sample_binomial(engine, 0, 0.4) == 0);
    CHECK(sample_binomial(engine, 17, 0.0) == 0);
    CHECK(sample_binomial(engine, 17, 1.0) == 17);
}

TEST_CASE("derived seeds differ by path and are deterministic") {
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
    auto engine = make_engine(5);
    for (int k = 0; k < 1000; ++k) {
        const double u = uniform_open01(engine);
        CHECK(u > 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("count split of zeros is zero and epsilon must lie strictly inside (0, 1)") {
    const CountMatrix zeros(3, 4);
    const auto split = count_split(zeros, 0.3, 1);
    CHECK(split.train == zeros);
    CHECK(split.test == zeros);
    for (double eps : {0.0, 1.0, -0.2, 1.5, std::nan("")}) {
        CHECK_THROWS_AS(count_split(zeros, eps, 1), Error);
    }
}

TEST_CASE("count split is additive, bounded and reproducible") {
    const auto m = poisson_matrix(40, 30, 7.0, 2);
    const auto a = count_split(m, 0.35, 99);
    const auto b = count_split(m, 0.35, 99);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.epsilon == 0.35);
    CHECK(a.seed == 99);
    for (std::size_t k = 0; k < m.values().size(); ++k) {
        CHECK(a.train.values()[k] + a.test.values()[k] == m.values()[k]);
        CHECK(a.train.values()[k] <= m.values()[k]);
    }
    const auto c = count_split(m, 0.35, 100);
    CHECK_FALSE(c.train == a.train);
}

TEST_CASE("count split of Poisson data gives independent thinned marginals") {
    const auto m = poisson_matrix(1000, 1000, 5.0, 4);
    const auto split = count_split(m, 0.3, 8);
    std::vector<double> train, test;
    train.reserve(m.values().size());
    test.reserve(m.values().size());
    double sum = 0, sum2 = 0;
    for (std::size_t k = 0; k < m.values().size(); ++k) {
        const auto t = static_cast<double>(split.train.values()[k]);
        train.push_back(t);
        test.push_back(static_cast<double>(split.test.values()[k]));
        sum += t;
        sum2 += t * t;
    }
    const double n = static_cast<double>(train.size());
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean - 1.5) < 0.01);
    CHECK(std::abs(var - 1.5) < 0.02);
    CHECK(std::abs(correlation(train, test)) < 0.01);
}

TEST_CASE("mcv split with zero overlap equals count split bit-for-bit") {
    const auto m = poisson_matrix(25, 12, 6.0, 5);
    McvConfig config{0.4, std::vector<double>(25, 0.7), std::vector<double>(25, 0.0)};
    const auto mcv = mcv_split(m, config, 31);
    const auto plain = count_split(m, 0.4, 31);
    CHECK(mcv.train == plain.train);
    CHECK(mcv.test == plain.test);
}

TEST_CASE("mcv split test mean follows the law of total expectation") {
    CountMatrix m(1000, 100);
    for (auto& v : m.values()) {
        v = 10;
    }
    McvConfig config{0.5, std::vector<double>(1000, 1.0), std::vector<double>(1000, 0.5)};
    const auto split = mcv_split(m, config, 12);
    double sum = 0;
    for (auto v : split.test.values()) {
        sum += static_cast<double>(v);
    }
    const double mean = sum / static_cast<double>(m.values().size());
    CHECK(std::abs(mean - 7.5) < 0.075);
}

TEST_CASE("mcv split validates its configuration") {
    const CountMatrix m(2, 2);
    CHECK_THROWS_AS(mcv_split(m, McvConfig{0.5, {1.0}, {0.0, 0.0}}, 1), Error);
    CHECK_THROWS_AS(mcv_split(m, McvConfig{0.5, {1.0, 1.0}, {0.0, 1.0}}, 1), Error);
    CHECK_THROWS_AS(mcv_split(m, McvConfig{0.5, {0.0, 1.0}, {0.0, 0.0}}, 1), Error);
    CHECK_THROWS_AS(mcv_split(m, McvConfig{1.0, {1.0, 1.0}, {0.0, 0.0}}, 1), Error);
}

TEST_CASE("cell split partitions rows with the rounded training size") {
    const CountMatrix m(10, 2);
    const auto split = cell_split(m, 0.5, 3);
    CHECK(split.train_rows.size() == 5);
    std::vector<std::size_t> all = split.train_rows;
    all.insert(all.end(), split.test_rows.begin(), split.test_rows.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(all[i] == i);
    }
    const auto again = cell_split(m, 0.5, 3);
    CHECK(again.train_rows == split.train_rows);
    CHECK(std::is_sorted(split.train_rows.begin(), split.train_rows.end()));
}

TEST_CASE("cell split keeps both sides non-empty") {
    const CountMatrix two(2, 1);
    CHECK(cell_split(two, 0.7, 1).train_rows.size() == 1);
    try {
        cell_split(two, 0.999, 1);
        FAIL("expected invalid_fraction");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_fraction);
    }
    CHECK_THROWS_AS(cell_split(two, 0.1, 1), Error);
    CHECK_THROWS_AS(cell_split(two, 1.0, 1), Error);
}

TEST_CASE("gene split halves the columns") {
    const CountMatrix m(3, 4);
    const auto split = gene_split(m, 8);
    CHECK(split.train_cols.size() == 2);
    CHECK(split.test_cols.size() == 2);
    std::vector<std::size_t> all = split.train_cols;
    all.insert(all.end(), split.test_cols.begin(), split.test_cols.end());
    std::sort(all.begin(), all.end());
    CHECK(all == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(gene_split(m, 8).train_cols == split.train_cols);
    CHECK(gene_split(CountMatrix(3, 5), 1).train_cols.size() == 3);
    try {
        gene_split(CountMatrix(3, 1), 1);
        FAIL("expected too_few_genes");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::too_few_genes);
    }
}
