// Text and CSV helpers shared by the harness artifacts.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mp/errors.hpp"

namespace mp::csv {

// Shortest decimal form that parses back to the same double.
inline std::string fmt_double(double v) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::stod(buf) == v) break;
  }
  return buf;
}

inline std::string trim(std::string_view s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  std::size_t b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = s.find(sep, pos);
    out.push_back(s.substr(pos, next - pos));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

inline long parse_long(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(what + ": not an integer: '" + s + "'");
  }
  if (used != s.size())
    throw std::invalid_argument(what + ": not an integer: '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(what + ": not a number: '" + s + "'");
  }
  if (used != s.size())
    throw std::invalid_argument(what + ": not a number: '" + s + "'");
  return v;
}

inline std::ofstream open_text(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw FormatError(p.string() + ": cannot open for writing");
  return out;
}

inline std::ifstream open_read(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw FormatError(p.string() + ": cannot open");
  return in;
}

// Checks the header and returns the non-empty data lines; a data-free file
// is an error so that downstream consumers never render from nothing.
inline std::vector<std::string> read_csv_body(std::ifstream& in,
                                              const std::filesystem::path& p,
                                              const std::string& header) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(p.string() + ": empty file");
  if (trim(line) != header) throw FormatError(p.string() + ": unexpected header");
  std::vector<std::string> rows;
  while (std::getline(in, line))
    if (!trim(line).empty()) rows.push_back(line);
  if (rows.empty()) throw FormatError(p.string() + ": no data rows");
  return rows;
}

}  // namespace mp::csv
