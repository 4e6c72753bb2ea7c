#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>

#include "augkern/error.hpp"

namespace augkern::io {

/// Shortest decimal text that round-trips to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw Error("failed to format number");
    return {buf, end};
}

inline double parse_double(std::string_view text, const std::string& where) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
        text.remove_suffix(1);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw InvalidArgument(where + ": cannot parse number '" + std::string(text) + "'");
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

/// Dense square matrix CSV: header row of state ids, then one row of values per state.
inline void write_matrix_csv(std::ostream& os, const Eigen::MatrixXd& m,
                             const std::vector<std::string>& ids) {
    if (static_cast<Eigen::Index>(ids.size()) != m.cols())
        throw InvalidArgument("matrix CSV: header size does not match matrix");
    for (std::size_t j = 0; j < ids.size(); ++j) os << (j ? "," : "") << ids[j];
    os << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << format_double(m(i, j));
        os << '\n';
    }
}

struct MatrixCsv {
    std::vector<std::string> ids;
    Eigen::MatrixXd matrix;
};

inline MatrixCsv read_matrix_csv(std::istream& is, const std::string& source = "matrix CSV") {
    MatrixCsv out;
    std::string line;
    if (!std::getline(is, line)) throw InvalidArgument(source + ": empty file");
    out.ids = split_csv_line(line);
    const auto n = static_cast<Eigen::Index>(out.ids.size());
    out.matrix.resize(n, n);
    Eigen::Index row = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r" || line[0] == '#') continue;
        auto cells = split_csv_line(line);
        const std::string where = source + " row " + std::to_string(row + 1);
        if (row >= n) throw InvalidArgument(where + ": more rows than header columns");
        if (static_cast<Eigen::Index>(cells.size()) != n)
            throw InvalidArgument(where + ": expected " + std::to_string(n) + " values");
        for (Eigen::Index j = 0; j < n; ++j)
            out.matrix(row, j) = parse_double(cells[static_cast<std::size_t>(j)], where);
        ++row;
    }
    if (row != n) throw InvalidArgument(source + ": expected " + std::to_string(n) + " rows");
    return out;
}

inline MatrixCsv read_matrix_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open '" + path + "'");
    return read_matrix_csv(in, path);
}

}  // namespace augkern::io
