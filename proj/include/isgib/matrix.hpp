#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "isgib/error.hpp"

namespace isgib {

// Row-major dense matrix of doubles. The plain (non-differentiable) numeric
// paths work on this type; the autodiff Tensor wraps the same layout.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool operator==(const Matrix& o) const { return rows == o.rows && cols == o.cols && data == o.data; }

    Matrix take_rows(const std::vector<std::size_t>& idx) const {
        Matrix out(idx.size(), cols);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            require(idx[i] < rows, errc::shape, "take_rows: index out of range");
            std::memcpy(out.row(i), row(idx[i]), cols * sizeof(double));
        }
        return out;
    }
};

// Shortest-exact formatting: %.17g round-trips every IEEE double, which is
// what keeps CSV artifacts reproducible and re-parsable bit-for-bit.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(std::string_view s, const std::string& context) {
    double v = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end)
        fail(errc::format, context + ": cannot parse number '" + std::string(s) + "'");
    return v;
}

inline long parse_long(std::string_view s, const std::string& context) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        fail(errc::format, context + ": cannot parse integer '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// Matrix <-> CSV. Lines starting with '#' are header comments and are skipped
// on read; write_matrix_csv emits one value row per matrix row.
inline void write_matrix_csv(const std::string& path, const Matrix& m,
                             const std::vector<std::string>& header_comments = {}) {
    std::ofstream out(path);
    require(out.good(), errc::io, "cannot open for writing: " + path);
    for (const auto& c : header_comments) out << "# " << c << "\n";
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j) out << ",";
            out << format_double(m.at(i, j));
        }
        out << "\n";
    }
    require(out.good(), errc::io, "write failed: " + path);
}

inline Matrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), errc::io, "cannot open: " + path);
    Matrix m;
    std::string line;
    std::vector<double> rowbuf;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto cells = split(line, ',');
        rowbuf.clear();
        for (const auto& c : cells) rowbuf.push_back(parse_double(trim(c), path));
        if (m.cols == 0) m.cols = rowbuf.size();
        require(rowbuf.size() == m.cols, errc::format, path + ": ragged row");
        m.data.insert(m.data.end(), rowbuf.begin(), rowbuf.end());
        ++m.rows;
    }
    return m;
}

} // namespace isgib
