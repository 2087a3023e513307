#pragma once

// Small file-format helpers shared by every module: RFC-4180-ish CSV
// reading/writing, shortest round-trip number formatting, and content hashes.

#include "tsbench/common.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string_view>

namespace tsbench::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

/// Parses a numeric cell; std::nullopt for an empty cell.
inline std::optional<double> parse_cell(std::string_view cell) {
  cell = trim(cell);
  if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan") return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw ParseError("malformed numeric cell '" + std::string(cell) + "'");
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;  // rows x columns, NaN where a cell was empty
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  for (auto& h : split_csv_line(line)) table.header.emplace_back(trim(h));
  const std::size_t cols = table.header.size();

  std::vector<double> flat;
  std::size_t rows = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != cols) {
      throw ParseError(path.string() + ": row " + std::to_string(lineno) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(cols));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      try {
        auto v = parse_cell(cells[c]);
        flat.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
      } catch (const ParseError& e) {
        throw ParseError(path.string() + ": row " + std::to_string(lineno) + ", column " +
                         std::to_string(c + 1) + ": " + e.what());
      }
    }
    ++rows;
  }
  table.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(flat.data(), rows, cols);
  return table;
}

inline void write_csv(const fs::path& path, const std::vector<std::string>& header,
                      const Matrix& values) {
  require_shape(header.size() == static_cast<std::size_t>(values.cols()),
                "csv header/column count mismatch");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c) out << ',';
    out << csv_escape(header[c]);
  }
  out << '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) out << ',';
      out << format_double(values(r, c));
    }
    out << '\n';
  }
}

// Square matrix with a leading name column: header is "" + names, each row
// starts with its name.
inline void write_labeled_matrix(const fs::path& path, const std::vector<std::string>& names,
                                 const Matrix& m) {
  require_shape(m.rows() == m.cols() && static_cast<std::size_t>(m.rows()) == names.size(),
                "labeled matrix must be square and match names");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << "";
  for (auto& n : names) out << ',' << csv_escape(n);
  out << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << csv_escape(names[r]);
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << format_double(m(r, c));
    out << '\n';
  }
}

struct LabeledMatrix {
  std::vector<std::string> names;
  Matrix values;
};

inline LabeledMatrix read_labeled_matrix(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  if (header.size() < 2) throw ParseError(path.string() + ": header too short");
  LabeledMatrix lm;
  for (std::size_t c = 1; c < header.size(); ++c) lm.names.emplace_back(trim(header[c]));
  const auto n = lm.names.size();
  lm.values = Matrix::Zero(n, n);
  std::size_t r = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != n + 1 || r >= n) {
      throw ShapeError(path.string() + ": expected a " + std::to_string(n) + "x" +
                       std::to_string(n) + " matrix with a name column");
    }
    for (std::size_t c = 0; c < n; ++c) {
      auto v = parse_cell(cells[c + 1]);
      if (!v) throw ParseError(path.string() + ": empty cell in matrix");
      lm.values(r, c) = *v;
    }
    ++r;
  }
  if (r != n) throw ShapeError(path.string() + ": expected " + std::to_string(n) + " rows");
  return lm;
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

inline std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_file_bytes(path)); }

/// Hash of every regular file under `dir`, keyed by relative path, in sorted order.
inline std::string sha256_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (auto& f : files) {
    acc += f.generic_string();
    acc += ':';
    acc += sha256_file(dir / f);
    acc += '\n';
  }
  return sha256_hex(acc);
}

}  // namespace tsbench::io
