#pragma once

// Minimal delimited-text reading: header row required, optional double quotes,
// comma or tab separators.

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rerand/error.hpp"

namespace rerand::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) return c;
    }
    fail(ErrorKind::Parse, "missing column '" + std::string(name) + "'");
  }
};

inline std::vector<std::string> split_line(std::string_view line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  if (quoted) fail(ErrorKind::Parse, "unterminated quote");
  cells.push_back(std::move(cell));
  return cells;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

/// delimiter 0 picks tab when the header contains one, comma otherwise.
inline Table read(std::istream& in, char delimiter = 0) {
  Table table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    if (!have_header) {
      if (delimiter == 0) delimiter = line.find('\t') != std::string::npos ? '\t' : ',';
      for (auto& cell : split_line(line, delimiter)) table.header.push_back(trim(cell));
      have_header = true;
      continue;
    }
    auto cells = split_line(line, delimiter);
    if (cells.size() != table.header.size()) {
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(table.header.size()) +
                                 " fields, got " + std::to_string(cells.size()));
    }
    for (auto& cell : cells) cell = trim(cell);
    table.rows.push_back(std::move(cells));
  }
  if (!have_header) fail(ErrorKind::Parse, "missing header row");
  return table;
}

inline Table read_file(const std::string& path, char delimiter = 0) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
  try {
    return read(in, delimiter);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

inline double parse_double(std::string_view text) {
  double value = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (text.empty() || ec != std::errc{} || ptr != last || !std::isfinite(value)) {
    fail(ErrorKind::Parse, "non-numeric cell '" + std::string(text) + "'");
  }
  return value;
}

inline long long parse_integer(std::string_view text) {
  long long value = 0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (text.empty() || ec != std::errc{} || ptr != last) {
    fail(ErrorKind::Parse, "non-integer cell '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace rerand::csv
