#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <system_error>
#include <vector>

#include "covmt/errors.hpp"
#include "covmt/panel.hpp"

namespace covmt::io {

/// Shortest decimal representation that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace detail

/**
 * Read a returns panel from CSV. The header must start with a `date` column
 * followed by one column per asset; every later row holds a timestamp and one
 * numeric return per asset. Parse failures report 1-based row and column
 * coordinates.
 */
inline ReturnsPanel read_panel_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line))
    throw DataError(source + ": empty input, expected a header row");
  line = detail::strip_cr(line);

  const std::vector<std::string> header = detail::split_csv_line(line);
  if (header.empty() || header[0] != "date")
    throw DataError(source + ": row 1, column 1: header must begin with 'date'");
  const int n = static_cast<int>(header.size()) - 1;
  if (n < 2) throw DataError(source + ": need at least 2 asset columns");
  for (int i = 1; i <= n; ++i)
    if (header[i].empty())
      throw DataError(source + ": row 1, column " + std::to_string(i + 1) +
                      ": empty asset name");
  std::vector<std::string> assets(header.begin() + 1, header.end());

  std::vector<std::string> timestamps;
  std::vector<double> flat;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (static_cast<int>(cells.size()) != n + 1)
      throw DataError(source + ": row " + std::to_string(row) + ": expected " +
                      std::to_string(n + 1) + " fields, got " +
                      std::to_string(cells.size()));
    if (cells[0].empty())
      throw DataError(source + ": row " + std::to_string(row) +
                      ", column 1: missing timestamp");
    timestamps.push_back(cells[0]);
    for (int i = 1; i <= n; ++i) {
      const std::string& cell = cells[i];
      if (cell.empty())
        throw DataError(source + ": row " + std::to_string(row) + ", column " +
                        std::to_string(i + 1) + ": missing value");
      double v;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw DataError(source + ": row " + std::to_string(row) + ", column " +
                        std::to_string(i + 1) + ": cannot parse '" + cell +
                        "' as a number");
      flat.push_back(v);
    }
  }

  const int t = static_cast<int>(timestamps.size());
  if (t < 2) throw DataError(source + ": need at least 2 data rows");
  Eigen::MatrixXd obs(t, n);
  for (int r = 0; r < t; ++r)
    for (int c = 0; c < n; ++c) obs(r, c) = flat[static_cast<std::size_t>(r) * n + c];

  try {
    return ReturnsPanel::create(std::move(timestamps), std::move(assets), std::move(obs));
  } catch (const DataError& e) {
    throw DataError(source + ": " + e.what());
  }
}

inline ReturnsPanel read_panel_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  return read_panel_csv(in, path);
}

/// Dense labeled matrix: header row of asset names, one labeled row per asset.
inline void write_dense_matrix_csv(std::ostream& out,
                                   const std::vector<std::string>& labels,
                                   const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  if (m.cols() != n) throw DataError("matrix CSV writer expects a square matrix");
  if (static_cast<int>(labels.size()) != n)
    throw DataError("label count does not match matrix dimension");
  for (int j = 0; j < n; ++j) out << ',' << labels[j];
  out << '\n';
  for (int i = 0; i < n; ++i) {
    out << labels[i];
    for (int j = 0; j < n; ++j) out << ',' << format_double(m(i, j));
    out << '\n';
  }
}

inline void write_dense_matrix_csv_file(const std::string& path,
                                        const std::vector<std::string>& labels,
                                        const Eigen::MatrixXd& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_dense_matrix_csv(out, labels, m);
}

}  // namespace covmt::io
