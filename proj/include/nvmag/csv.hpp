#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nvmag/errors.hpp"

namespace nvmag::csv {

/// Shortest decimal form that round-trips the double exactly.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Two numeric columns with a mandatory header row.
struct TwoColumns {
  std::vector<double> first;
  std::vector<double> second;
};

inline double parse_number(std::string_view field, const std::string& where) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
    field.remove_suffix(1);
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw ParseError(where + ": not a number: '" + std::string(field) + "'");
  return v;
}

inline TwoColumns parse_two_columns(std::istream& in, std::string_view header, const std::string& name) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(name + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (line != header)
    throw ParseError(name + ":1: expected header '" + std::string(header) + "', got '" + line + "'");

  TwoColumns out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto comma = line.find(',');
    const std::string where = name + ":" + std::to_string(lineno);
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw ParseError(where + ": expected exactly two comma-separated fields");
    out.first.push_back(parse_number(std::string_view(line).substr(0, comma), where));
    out.second.push_back(parse_number(std::string_view(line).substr(comma + 1), where));
  }
  if (out.first.empty()) throw ParseError(name + ": no data rows");
  return out;
}

inline TwoColumns read_two_columns(const std::string& path, std::string_view header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  return parse_two_columns(in, header, path);
}

inline void write_two_columns(std::ostream& out, std::string_view header, const std::vector<double>& a,
                              const std::vector<double>& b) {
  out << header << '\n';
  for (size_t k = 0; k < a.size(); ++k) out << format_double(a[k]) << ',' << format_double(b[k]) << '\n';
}

inline void write_two_columns(const std::string& path, std::string_view header, const std::vector<double>& a,
                              const std::vector<double>& b) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open for writing");
  write_two_columns(out, header, a, b);
}

}  // namespace nvmag::csv
