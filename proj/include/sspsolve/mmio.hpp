#pragma once

// Matrix Market I/O: dense real matrices in array or coordinate form, and
// coordinate pattern files for sparsity structures. Values are written with
// %.17g so a write/read cycle reproduces every double bit for bit.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sspsolve/symmat.hpp"

namespace sspsolve {

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& tok) {
  const char* s = tok.c_str();
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  if (end == s || *end != '\0') throw ParseError("matrix market: bad number '" + tok + "'");
  return v;
}

inline long parse_long(const std::string& tok) {
  const char* s = tok.c_str();
  char* end = nullptr;
  const long v = std::strtol(s, &end, 10);
  if (end == s || *end != '\0') throw ParseError("matrix market: bad integer '" + tok + "'");
  return v;
}

/// Next line that is neither blank nor a % comment; empty at end of stream.
inline bool next_content_line(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    size_t pos = 0;
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos == line.size()) continue;
    if (line[pos] == '%') continue;
    return true;
  }
  return false;
}

inline std::vector<std::string> split_tokens(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> toks;
  std::string t;
  while (is >> t) toks.push_back(t);
  return toks;
}

struct MmHeader {
  std::string format;    // array | coordinate
  std::string field;     // real | integer | pattern
  std::string symmetry;  // general | symmetric | skew-symmetric
};

inline MmHeader read_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("matrix market: empty stream");
  std::istringstream is(line);
  std::string banner, object;
  MmHeader h;
  is >> banner >> object >> h.format >> h.field >> h.symmetry;
  for (auto* s : {&object, &h.format, &h.field, &h.symmetry})
    for (char& ch : *s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (banner != "%%MatrixMarket" || object != "matrix")
    throw ParseError("matrix market: missing %%MatrixMarket matrix banner");
  if (h.format != "array" && h.format != "coordinate")
    throw ParseError("matrix market: unsupported format '" + h.format + "'");
  if (h.field != "real" && h.field != "integer" && h.field != "pattern")
    throw ParseError("matrix market: unsupported field '" + h.field + "'");
  if (h.symmetry != "general" && h.symmetry != "symmetric" && h.symmetry != "skew-symmetric")
    throw ParseError("matrix market: unsupported symmetry '" + h.symmetry + "'");
  return h;
}

}  // namespace detail

inline void write_matrix(std::ostream& out, const MatrixXd& M) {
  out << "%%MatrixMarket matrix array real general\n";
  out << M.rows() << ' ' << M.cols() << '\n';
  for (Eigen::Index c = 0; c < M.cols(); ++c)
    for (Eigen::Index r = 0; r < M.rows(); ++r) out << detail::format_double(M(r, c)) << '\n';
}

inline MatrixXd read_matrix(std::istream& in) {
  const detail::MmHeader h = detail::read_header(in);
  if (h.field == "pattern")
    throw ParseError("matrix market: pattern file where a value matrix was expected");
  std::string line;
  if (!detail::next_content_line(in, line)) throw ParseError("matrix market: missing size line");
  const auto size_toks = detail::split_tokens(line);

  if (h.format == "array") {
    if (size_toks.size() != 2) throw ParseError("matrix market: array size line needs 2 fields");
    const long rows = detail::parse_long(size_toks[0]);
    const long cols = detail::parse_long(size_toks[1]);
    if (rows < 0 || cols < 0) throw ParseError("matrix market: negative dimension");
    MatrixXd M(rows, cols);
    if (h.symmetry == "general") {
      for (long c = 0; c < cols; ++c)
        for (long r = 0; r < rows; ++r) {
          if (!detail::next_content_line(in, line))
            throw ParseError("matrix market: truncated array data");
          M(r, c) = detail::parse_double(detail::split_tokens(line).at(0));
        }
    } else {
      // lower triangle by columns
      if (rows != cols) throw ParseError("matrix market: symmetric array must be square");
      const double sgn = h.symmetry == "skew-symmetric" ? -1.0 : 1.0;
      M.setZero();
      for (long c = 0; c < cols; ++c)
        for (long r = h.symmetry == "skew-symmetric" ? c + 1 : c; r < rows; ++r) {
          if (!detail::next_content_line(in, line))
            throw ParseError("matrix market: truncated array data");
          const double v = detail::parse_double(detail::split_tokens(line).at(0));
          M(r, c) = v;
          M(c, r) = sgn * v;
        }
    }
    return M;
  }

  if (size_toks.size() != 3) throw ParseError("matrix market: coordinate size line needs 3 fields");
  const long rows = detail::parse_long(size_toks[0]);
  const long cols = detail::parse_long(size_toks[1]);
  const long nnz = detail::parse_long(size_toks[2]);
  if (rows < 0 || cols < 0 || nnz < 0) throw ParseError("matrix market: negative dimension");
  MatrixXd M = MatrixXd::Zero(rows, cols);
  for (long e = 0; e < nnz; ++e) {
    if (!detail::next_content_line(in, line))
      throw ParseError("matrix market: truncated coordinate data");
    const auto toks = detail::split_tokens(line);
    if (toks.size() != 3) throw ParseError("matrix market: coordinate entry needs i j value");
    const long i = detail::parse_long(toks[0]);
    const long j = detail::parse_long(toks[1]);
    if (i < 1 || i > rows || j < 1 || j > cols)
      throw ParseError("matrix market: coordinate index out of range");
    const double v = detail::parse_double(toks[2]);
    M(i - 1, j - 1) += v;
    if (h.symmetry != "general" && i != j)
      M(j - 1, i - 1) += h.symmetry == "skew-symmetric" ? -v : v;
  }
  return M;
}

/// Zero-based (row, col) index pairs with the bounding shape they live in.
struct CoordPattern {
  int rows = 0;
  int cols = 0;
  std::vector<std::pair<int, int>> entries;  // sorted, unique
};

inline void write_pattern(std::ostream& out, const CoordPattern& p) {
  out << "%%MatrixMarket matrix coordinate pattern general\n";
  out << p.rows << ' ' << p.cols << ' ' << p.entries.size() << '\n';
  for (const auto& [r, c] : p.entries) out << r + 1 << ' ' << c + 1 << '\n';
}

inline CoordPattern read_pattern(std::istream& in) {
  const detail::MmHeader h = detail::read_header(in);
  if (h.format != "coordinate" || h.field != "pattern")
    throw ParseError("matrix market: expected a coordinate pattern file");
  std::string line;
  if (!detail::next_content_line(in, line)) throw ParseError("matrix market: missing size line");
  const auto size_toks = detail::split_tokens(line);
  if (size_toks.size() != 3) throw ParseError("matrix market: coordinate size line needs 3 fields");
  CoordPattern p;
  p.rows = static_cast<int>(detail::parse_long(size_toks[0]));
  p.cols = static_cast<int>(detail::parse_long(size_toks[1]));
  const long nnz = detail::parse_long(size_toks[2]);
  if (p.rows < 0 || p.cols < 0 || nnz < 0) throw ParseError("matrix market: negative dimension");
  for (long e = 0; e < nnz; ++e) {
    if (!detail::next_content_line(in, line))
      throw ParseError("matrix market: truncated pattern data");
    const auto toks = detail::split_tokens(line);
    if (toks.size() != 2) throw ParseError("matrix market: pattern entry needs i j");
    const long i = detail::parse_long(toks[0]);
    const long j = detail::parse_long(toks[1]);
    if (i < 1 || i > p.rows || j < 1 || j > p.cols)
      throw ParseError("matrix market: pattern index out of range");
    p.entries.emplace_back(static_cast<int>(i - 1), static_cast<int>(j - 1));
    if (h.symmetry != "general" && i != j)
      p.entries.emplace_back(static_cast<int>(j - 1), static_cast<int>(i - 1));
  }
  std::sort(p.entries.begin(), p.entries.end());
  p.entries.erase(std::unique(p.entries.begin(), p.entries.end()), p.entries.end());
  return p;
}

inline void save_matrix(const std::string& path, const MatrixXd& M) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  write_matrix(out, M);
  if (!out) throw ParseError("write failed on '" + path + "'");
}

inline MatrixXd load_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return read_matrix(in);
}

inline void save_pattern(const std::string& path, const CoordPattern& p) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  write_pattern(out, p);
  if (!out) throw ParseError("write failed on '" + path + "'");
}

inline CoordPattern load_pattern(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return read_pattern(in);
}

}  // namespace sspsolve
