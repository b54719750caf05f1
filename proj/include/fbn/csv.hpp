#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fbn/common.hpp"
#include "fbn/tensor.hpp"

namespace fbn {

// 17 significant digits round-trip doubles exactly.
inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& context) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || (end != nullptr && *end != '\0'))
    throw data_error("non-numeric cell '" + s + "' in " + context);
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw data_error("cannot create directory " + dir.string() + ": " + ec.message());
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open " + path.string() + " for writing");
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path.string() + " for reading");
  return in;
}

inline void write_matrix_csv(const std::filesystem::path& path, const Tensor& m,
                             const std::vector<std::string>& header = {}) {
  std::ofstream out = open_out(path);
  if (!header.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
    out << "\n";
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << fmt17(m.at(i, j));
    out << "\n";
  }
}

inline Tensor read_matrix_csv(const std::filesystem::path& path, bool skip_header = false) {
  std::ifstream in = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first && skip_header) {
      first = false;
      continue;
    }
    first = false;
    const auto cells = split_csv_line(line);
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_double(c, path.string()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw data_error("empty matrix file " + path.string());
  const std::size_t cols = rows[0].size();
  for (const auto& r : rows)
    if (r.size() != cols) throw data_error("ragged rows in " + path.string());
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::from({rows.size(), cols}, std::move(flat));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out = open_out(path);
  out << content;
}

}  // namespace fbn
