#include "countsplit/count_matrix.hpp"

#include "countsplit/error.hpp"

#include <fmt/format.h>

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace countsplit {

CountMatrix::CountMatrix(std::size_t n_cells, std::size_t n_genes)
    : n_cells_(n_cells), n_genes_(n_genes), counts_(n_cells * n_genes, 0) {}

CountMatrix::CountMatrix(std::size_t n_cells, std::size_t n_genes, std::vector<Count> counts)
    : n_cells_(n_cells), n_genes_(n_genes), counts_(std::move(counts)) {
    if (counts_.size() != n_cells_ * n_genes_) {
        throw Error(ErrorCode::dimension_mismatch,
            fmt::format("expected {} x {} = {} counts, got {}", n_cells_, n_genes_, n_cells_ * n_genes_, counts_.size()));
    }
}

std::vector<double> CountMatrix::column(std::size_t gene) const {
    std::vector<double> out(n_cells_);
    for (std::size_t i = 0; i < n_cells_; ++i) {
        out[i] = static_cast<double>(counts_[i * n_genes_ + gene]);
    }
    return out;
}

std::vector<double> CountMatrix::row_sums() const {
    std::vector<double> out(n_cells_, 0.0);
    for (std::size_t i = 0; i < n_cells_; ++i) {
        Count total = 0;
        for (auto x : row(i)) {
            total += x;
        }
        out[i] = static_cast<double>(total);
    }
    return out;
}

CountMatrix CountMatrix::select_rows(std::span<const std::size_t> rows) const {
    CountMatrix out(rows.size(), n_genes_);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto src = row(rows[r]);
        std::copy(src.begin(), src.end(), out.counts_.begin() + static_cast<std::ptrdiff_t>(r * n_genes_));
    }
    out.gene_names_ = gene_names_;
    if (cell_names_) {
        std::vector<std::string> names;
        names.reserve(rows.size());
        for (auto r : rows) {
            names.push_back((*cell_names_)[r]);
        }
        out.cell_names_ = std::move(names);
    }
    return out;
}

CountMatrix CountMatrix::select_columns(std::span<const std::size_t> cols) const {
    CountMatrix out(n_cells_, cols.size());
    for (std::size_t i = 0; i < n_cells_; ++i) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
            out.counts_[i * cols.size() + c] = counts_[i * n_genes_ + cols[c]];
        }
    }
    out.cell_names_ = cell_names_;
    if (gene_names_) {
        std::vector<std::string> names;
        names.reserve(cols.size());
        for (auto c : cols) {
            names.push_back((*gene_names_)[c]);
        }
        out.gene_names_ = std::move(names);
    }
    return out;
}

void CountMatrix::set_gene_names(std::vector<std::string> names) {
    if (names.size() != n_genes_) {
        throw Error(ErrorCode::dimension_mismatch, fmt::format("{} gene names for {} genes", names.size(), n_genes_));
    }
    gene_names_ = std::move(names);
}

void CountMatrix::set_cell_names(std::vector<std::string> names) {
    if (names.size() != n_cells_) {
        throw Error(ErrorCode::dimension_mismatch, fmt::format("{} cell names for {} cells", names.size(), n_cells_));
    }
    cell_names_ = std::move(names);
}

RealMatrix RealMatrix::select_rows(std::span<const std::size_t> rows) const {
    RealMatrix out(rows.size(), n_cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto src = row(rows[r]);
        std::copy(src.begin(), src.end(), out.values.begin() + static_cast<std::ptrdiff_t>(r * n_cols));
    }
    return out;
}

MatrixFormat format_from_path(const std::filesystem::path& path) {
    return path.extension() == ".mtx" ? MatrixFormat::matrix_market : MatrixFormat::csv_dense;
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            return out;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) {
            ++j;
        }
        if (j > i) {
            out.push_back(line.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

// Row/column are 1-based in messages.
Count parse_count(std::string_view token, std::size_t row, std::size_t col) {
    if (token.empty()) {
        throw Error(ErrorCode::parse_error, fmt::format("empty entry at row {}, column {}", row, col));
    }
    if (token.front() == '-') {
        throw Error(ErrorCode::parse_error, fmt::format("negative entry '{}' at row {}, column {}", token, row, col));
    }
    Count value = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec == std::errc() && ptr == token.data() + token.size()) {
        return value;
    }
    double real = 0;
    auto [rptr, rec] = std::from_chars(token.data(), token.data() + token.size(), real);
    if (rec == std::errc() && rptr == token.data() + token.size()) {
        throw Error(ErrorCode::parse_error, fmt::format("fractional entry '{}' at row {}, column {}", token, row, col));
    }
    throw Error(ErrorCode::parse_error, fmt::format("non-numeric entry '{}' at row {}, column {}", token, row, col));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::io_error, fmt::format("cannot open '{}'", path.string()));
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    if (in.bad()) {
        throw Error(ErrorCode::io_error, fmt::format("failed reading '{}'", path.string()));
    }
    return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::io_error, fmt::format("cannot open '{}' for writing", path.string()));
    }
    out << content;
    if (!out) {
        throw Error(ErrorCode::io_error, fmt::format("failed writing '{}'", path.string()));
    }
}

}

CountMatrix parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::optional<std::vector<std::string>> header;
    std::vector<Count> counts;
    std::size_t n_cols = 0;
    std::size_t n_rows = 0;
    std::size_t line_no = 0;
    bool first = true;

    while (std::getline(in, line)) {
        ++line_no;
        auto view = trim(line);
        if (view.empty()) {
            continue;
        }
        auto fields = split_fields(view, ',');
        if (first) {
            first = false;
            // A first row with any non-numeric field is a header of gene names.
            bool any_text = false;
            for (auto f : fields) {
                double real = 0;
                auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), real);
                if (!f.empty() && (ec != std::errc() || ptr != f.data() + f.size())) {
                    any_text = true;
                }
            }
            if (any_text) {
                std::vector<std::string> names;
                for (auto f : fields) {
                    names.emplace_back(f);
                }
                n_cols = names.size();
                header = std::move(names);
                continue;
            }
        }
        if (n_cols == 0) {
            n_cols = fields.size();
        }
        if (fields.size() != n_cols) {
            throw Error(ErrorCode::parse_error,
                fmt::format("row {} has {} fields, expected {}", n_rows + 1, fields.size(), n_cols));
        }
        for (std::size_t j = 0; j < fields.size(); ++j) {
            counts.push_back(parse_count(fields[j], n_rows + 1, j + 1));
        }
        ++n_rows;
    }

    if (n_rows == 0 || n_cols == 0) {
        throw Error(ErrorCode::parse_error, "CSV contains no data rows");
    }
    CountMatrix out(n_rows, n_cols, std::move(counts));
    if (header) {
        out.set_gene_names(std::move(*header));
    }
    return out;
}

std::string format_csv(const CountMatrix& matrix) {
    std::string out;
    if (matrix.gene_names()) {
        const auto& names = *matrix.gene_names();
        for (std::size_t j = 0; j < names.size(); ++j) {
            if (j) {
                out += ',';
            }
            out += names[j];
        }
        out += '\n';
    }
    for (std::size_t i = 0; i < matrix.n_cells(); ++i) {
        auto r = matrix.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (j) {
                out += ',';
            }
            out += fmt::format("{}", r[j]);
        }
        out += '\n';
    }
    return out;
}

CountMatrix parse_matrix_market(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
        throw Error(ErrorCode::parse_error, "empty MatrixMarket file");
    }
    auto banner = split_whitespace(line);
    auto lower = [](std::string_view s) {
        std::string out(s);
        for (auto& c : out) {
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
        return out;
    };
    if (banner.size() != 5 || banner[0] != "%%MatrixMarket" || lower(banner[1]) != "matrix"
        || lower(banner[2]) != "coordinate" || lower(banner[3]) != "integer" || lower(banner[4]) != "general") {
        throw Error(ErrorCode::parse_error,
            "expected header '%%MatrixMarket matrix coordinate integer general', got '" + line + "'");
    }

    std::size_t rows = 0, cols = 0, nnz = 0;
    bool have_size = false;
    std::vector<Count> counts;
    std::vector<bool> seen;
    std::size_t read_entries = 0;
    std::size_t line_no = 1;

    while (std::getline(in, line)) {
        ++line_no;
        auto view = trim(line);
        if (view.empty() || view.front() == '%') {
            continue;
        }
        auto fields = split_whitespace(view);
        if (!have_size) {
            if (fields.size() != 3) {
                throw Error(ErrorCode::parse_error, fmt::format("line {}: malformed size line", line_no));
            }
            rows = parse_count(fields[0], line_no, 1);
            cols = parse_count(fields[1], line_no, 2);
            nnz = parse_count(fields[2], line_no, 3);
            if (rows == 0 || cols == 0) {
                throw Error(ErrorCode::parse_error, "matrix must have at least one row and one column");
            }
            counts.assign(rows * cols, 0);
            seen.assign(rows * cols, false);
            have_size = true;
            continue;
        }
        if (fields.size() != 3) {
            throw Error(ErrorCode::parse_error, fmt::format("line {}: expected 'row col value'", line_no));
        }
        auto i = parse_count(fields[0], line_no, 1);
        auto j = parse_count(fields[1], line_no, 2);
        if (i < 1 || i > rows || j < 1 || j > cols) {
            throw Error(ErrorCode::parse_error, fmt::format("line {}: index ({}, {}) out of range", line_no, i, j));
        }
        auto v = parse_count(fields[2], i, j);
        auto idx = (i - 1) * cols + (j - 1);
        if (seen[idx]) {
            throw Error(ErrorCode::parse_error, fmt::format("duplicate entry at row {}, column {}", i, j));
        }
        seen[idx] = true;
        counts[idx] = v;
        ++read_entries;
    }

    if (!have_size) {
        throw Error(ErrorCode::parse_error, "missing MatrixMarket size line");
    }
    if (read_entries != nnz) {
        throw Error(ErrorCode::parse_error, fmt::format("expected {} entries, found {}", nnz, read_entries));
    }
    return CountMatrix(rows, cols, std::move(counts));
}

std::string format_matrix_market(const CountMatrix& matrix) {
    std::size_t nnz = 0;
    for (auto v : matrix.values()) {
        nnz += (v != 0);
    }
    std::string out = "%%MatrixMarket matrix coordinate integer general\n";
    out += fmt::format("{} {} {}\n", matrix.n_cells(), matrix.n_genes(), nnz);
    for (std::size_t i = 0; i < matrix.n_cells(); ++i) {
        for (std::size_t j = 0; j < matrix.n_genes(); ++j) {
            if (auto v = matrix(i, j); v != 0) {
                out += fmt::format("{} {} {}\n", i + 1, j + 1, v);
            }
        }
    }
    return out;
}

CountMatrix load_matrix(const std::filesystem::path& path, MatrixFormat format) {
    auto text = read_file(path);
    return format == MatrixFormat::csv_dense ? parse_csv(text) : parse_matrix_market(text);
}

void save_matrix(const CountMatrix& matrix, const std::filesystem::path& path, MatrixFormat format) {
    write_file(path, format == MatrixFormat::csv_dense ? format_csv(matrix) : format_matrix_market(matrix));
}

SizeFactors estimate_size_factors(const CountMatrix& matrix) {
    auto sums = matrix.row_sums();
    double log_total = 0;
    for (std::size_t i = 0; i < sums.size(); ++i) {
        if (sums[i] <= 0) {
            throw Error(ErrorCode::degenerate_cell, fmt::format("cell {} has no counts", i));
        }
        log_total += std::log(sums[i]);
    }
    const double log_geomean = log_total / static_cast<double>(sums.size());
    SizeFactors out;
    out.gamma.resize(sums.size());
    for (std::size_t i = 0; i < sums.size(); ++i) {
        out.gamma[i] = std::exp(std::log(sums[i]) - log_geomean);
    }
    return out;
}

RealMatrix log_normalize(const CountMatrix& matrix, const SizeFactors& size_factors, double pseudocount) {
    if (size_factors.gamma.size() != matrix.n_cells()) {
        throw Error(ErrorCode::dimension_mismatch,
            fmt::format("{} size factors for {} cells", size_factors.gamma.size(), matrix.n_cells()));
    }
    if (!(pseudocount > 0)) {
        throw Error(ErrorCode::invalid_config, "pseudocount must be positive");
    }
    RealMatrix out(matrix.n_cells(), matrix.n_genes());
    for (std::size_t i = 0; i < matrix.n_cells(); ++i) {
        const double g = size_factors.gamma[i];
        auto r = matrix.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            out(i, j) = std::log(static_cast<double>(r[j]) / g + pseudocount);
        }
    }
    return out;
}

}
