#include "countsplit/count_matrix.hpp"
#include "countsplit/error.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace countsplit;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::io_error;
}

}

TEST_CASE("csv without header parses row-major counts") {
    const auto m = parse_csv("1,0\n2,5\n0,3");
    REQUIRE(m.n_cells() == 3);
    REQUIRE(m.n_genes() == 2);
    CHECK(m(0, 0) == 1);
    CHECK(m(0, 1) == 0);
    CHECK(m(1, 0) == 2);
    CHECK(m(1, 1) == 5);
    CHECK(m(2, 0) == 0);
    CHECK(m(2, 1) == 3);
    CHECK_FALSE(m.gene_names().has_value());
}

TEST_CASE("csv header row becomes gene names") {
    const auto m = parse_csv("a,b\n1,2\n");
    REQUIRE(m.gene_names().has_value());
    CHECK((*m.gene_names())[1] == "b");
    CHECK(m.n_cells() == 1);
}

TEST_CASE("csv rejects negative, fractional and non-numeric entries with a location") {
    for (const char* text : {"1,2\n3,-1\n", "1,2\n3,1.5\n", "1,2\n3,x\n"}) {
        try {
            parse_csv(text);
            FAIL("expected parse_error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::parse_error);
            CHECK(std::string(e.what()).find("row 2") != std::string::npos);
            CHECK(std::string(e.what()).find("column 2") != std::string::npos);
        }
    }
}

TEST_CASE("csv rejects ragged rows") {
    CHECK(code_of([] { parse_csv("1,2\n3\n"); }) == ErrorCode::parse_error);
}

TEST_CASE("matrix market fills unstored entries with zero") {
    const auto m = parse_matrix_market("%%MatrixMarket matrix coordinate integer general\n% comment\n2 2 2\n1 1 4\n2 2 7\n");
    REQUIRE(m.n_cells() == 2);
    CHECK(m(0, 0) == 4);
    CHECK(m(0, 1) == 0);
    CHECK(m(1, 0) == 0);
    CHECK(m(1, 1) == 7);
}

TEST_CASE("matrix market rejects bad headers, counts and indices") {
    CHECK(code_of([] { parse_matrix_market("%%MatrixMarket matrix array real general\n1 1\n1\n"); }) == ErrorCode::parse_error);
    CHECK(code_of([] { parse_matrix_market("%%MatrixMarket matrix coordinate integer general\n2 2 2\n1 1 4\n"); }) ==
        ErrorCode::parse_error);
    CHECK(code_of([] { parse_matrix_market("%%MatrixMarket matrix coordinate integer general\n2 2 1\n3 1 4\n"); }) ==
        ErrorCode::parse_error);
    CHECK(code_of([] { parse_matrix_market("%%MatrixMarket matrix coordinate integer general\n2 2 1\n1 1 -4\n"); }) ==
        ErrorCode::parse_error);
}

TEST_CASE("save and load round trip both formats bit-exactly") {
    std::mt19937_64 engine(3);
    std::poisson_distribution<Count> poisson(2.5);
    CountMatrix m(7, 5);
    for (auto& v : m.values()) {
        v = poisson(engine);
    }
    m(2, 3) = 123456789012ULL;
    m.set_gene_names({"g1", "g2", "g3", "g4", "g5"});
    const auto dir = std::filesystem::temp_directory_path();
    for (auto format : {MatrixFormat::csv_dense, MatrixFormat::matrix_market}) {
        const auto path = dir / (format == MatrixFormat::csv_dense ? "cs_roundtrip.csv" : "cs_roundtrip.mtx");
        save_matrix(m, path, format);
        const auto back = load_matrix(path, format_from_path(path));
        CHECK(back == m);
        std::filesystem::remove(path);
    }
}

TEST_CASE("load reports io_error for a missing file") {
    CHECK(code_of([] { load_matrix("/nonexistent/x.csv", MatrixFormat::csv_dense); }) == ErrorCode::io_error);
}

TEST_CASE("size factors are rowsums over their geometric mean") {
    const auto equal = estimate_size_factors(parse_csv("5,5\n1,9\n10,0\n"));
    for (auto g : equal.gamma) {
        CHECK(g == doctest::Approx(1.0));
    }
    const auto two = estimate_size_factors(parse_csv("1,0\n2,2\n"));
    CHECK(two.gamma[0] == doctest::Approx(0.5));
    CHECK(two.gamma[1] == doctest::Approx(2.0));
    CHECK(code_of([] { estimate_size_factors(parse_csv("1,2\n0,0\n")); }) == ErrorCode::degenerate_cell);
}

TEST_CASE("size factors have unit geometric mean and ignore overall scale") {
    std::mt19937_64 engine(9);
    std::poisson_distribution<Count> poisson(4);
    CountMatrix m(50, 8);
    for (auto& v : m.values()) {
        v = poisson(engine) + 1;
    }
    auto doubled = m;
    for (auto& v : doubled.values()) {
        v *= 2;
    }
    const auto a = estimate_size_factors(m);
    const auto b = estimate_size_factors(doubled);
    double log_sum = 0;
    for (std::size_t i = 0; i < a.gamma.size(); ++i) {
        log_sum += std::log(a.gamma[i]);
        CHECK(a.gamma[i] == doctest::Approx(b.gamma[i]).epsilon(1e-12));
    }
    CHECK(std::abs(log_sum / 50) < 1e-10);
}

TEST_CASE("log normalize divides by size factor and adds the pseudocount") {
    const auto m = parse_csv("0,9\n4,1\n");
    const auto out = log_normalize(m, SizeFactors{{1.0, 2.0}}, 1.0);
    CHECK(out(0, 0) == 0.0);
    CHECK(out(0, 1) == doctest::Approx(2.302585092994046));
    CHECK(out(1, 0) == doctest::Approx(1.0986122886681098));
    CHECK(code_of([&] { log_normalize(m, SizeFactors{{1.0}}, 1.0); }) == ErrorCode::dimension_mismatch);
}

TEST_CASE("log normalize is monotone in the count") {
    CountMatrix m(1, 20);
    for (std::size_t j = 0; j < 20; ++j) {
        m(0, j) = j;
    }
    const auto out = log_normalize(m, SizeFactors{{0.7}}, 1.0);
    for (std::size_t j = 1; j < 20; ++j) {
        CHECK(out(0, j) > out(0, j - 1));
    }
}

TEST_CASE("row and column selection keep names aligned") {
    auto m = parse_csv("a,b,c\n1,2,3\n4,5,6\n");
    m.set_cell_names({"x", "y"});
    const std::vector<std::size_t> cols{2, 0};
    const auto sub = m.select_columns(cols);
    CHECK(sub(1, 0) == 6);
    CHECK((*sub.gene_names())[0] == "c");
    const std::vector<std::size_t> rows{1};
    const auto r = m.select_rows(rows);
    CHECK(r(0, 1) == 5);
    CHECK((*r.cell_names())[0] == "y");
    CHECK(code_of([&] { m.set_gene_names({"only"}); }) == ErrorCode::dimension_mismatch);
}
