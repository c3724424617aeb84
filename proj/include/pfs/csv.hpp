#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pfs/error.hpp"

namespace pfs::csv {

/// In-memory CSV: a header and string cells. Quoted fields follow RFC 4180.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find(std::string_view column) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == column) return i;
    return std::nullopt;
  }

  std::size_t require(std::string_view column, std::string_view source = {}) const {
    auto idx = find(column);
    if (!idx) {
      std::string msg = "missing column '" + std::string(column) + "'";
      if (!source.empty()) msg += " in " + std::string(source);
      throw Error(ErrorKind::schema, msg);
    }
    return *idx;
  }
};

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  out.push_back(std::move(cell));
  return out;
}

inline Table parse(std::istream& in, std::string_view source = "<stream>") {
  Table t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      t.header = split_line(line);
      have_header = true;
      continue;
    }
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size())
      throw Error(ErrorKind::schema, std::string(source) + ": row " + std::to_string(t.rows.size() + 1) +
                                         " has " + std::to_string(cells.size()) + " fields, header has " +
                                         std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (!have_header) throw Error(ErrorKind::schema, std::string(source) + ": empty file");
  return t;
}

inline Table read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::data, "cannot open " + path.string());
  return parse(in, path.string());
}

inline std::string quote(std::string_view cell) {
  if (cell.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(cell);
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void write(std::ostream& out, const Table& t) {
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << quote(cells[i]);
    }
    out << '\n';
  };
  emit(t.header);
  for (const auto& r : t.rows) emit(r);
}

inline void write(const std::filesystem::path& path, const Table& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::data, "cannot write " + path.string());
  write(out, t);
}

/// Shortest round-trip decimal representation; NaN prints as an empty cell.
inline std::string format(double v) {
  if (std::isnan(v)) return {};
  if (v == 0.0) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format(std::optional<double> v) { return v ? format(*v) : std::string{}; }

inline std::string format_int(long long v) { return std::to_string(v); }

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

/// Parses a real number; empty cells are missing, malformed cells are missing
/// and flagged through `malformed`.
inline std::optional<double> parse_double(std::string_view cell, bool* malformed = nullptr) {
  std::string s = trim(cell);
  if (malformed) *malformed = false;
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    if (malformed) *malformed = true;
    return std::nullopt;
  }
  return v;
}

inline std::optional<long long> parse_int(std::string_view cell, bool* malformed = nullptr) {
  std::string s = trim(cell);
  if (malformed) *malformed = false;
  if (s.empty()) return std::nullopt;
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    if (malformed) *malformed = true;
    return std::nullopt;
  }
  return v;
}

inline double require_double(const Table& t, std::size_t row, std::size_t col) {
  auto v = parse_double(t.rows[row][col]);
  if (!v)
    throw Error(ErrorKind::data, "row " + std::to_string(row + 1) + " column '" + t.header[col] +
                                     "': expected a number, got '" + t.rows[row][col] + "'");
  return *v;
}

inline long long require_int(const Table& t, std::size_t row, std::size_t col) {
  auto v = parse_int(t.rows[row][col]);
  if (!v)
    throw Error(ErrorKind::data, "row " + std::to_string(row + 1) + " column '" + t.header[col] +
                                     "': expected an integer, got '" + t.rows[row][col] + "'");
  return *v;
}

}  // namespace pfs::csv
