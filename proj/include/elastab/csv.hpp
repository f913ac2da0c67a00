#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace elastab::csv {

/// Full round-trip formatting for doubles ('.' decimal separator).
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_double(const std::string& cell, int line_no) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("csv: non-numeric cell '" + cell + "' at line " +
                             std::to_string(line_no));
  }
  if (pos != cell.size())
    throw std::runtime_error("csv: trailing garbage in cell '" + cell +
                             "' at line " + std::to_string(line_no));
  return v;
}

inline long parse_int(const std::string& cell, int line_no) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(cell, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("csv: non-integer cell '" + cell + "' at line " +
                             std::to_string(line_no));
  }
  if (pos != cell.size())
    throw std::runtime_error("csv: trailing garbage in cell '" + cell +
                             "' at line " + std::to_string(line_no));
  return v;
}

/// Reads all rows of a CSV file (header included). '\n' line endings;
/// a trailing '\r' is stripped so CRLF files still load.
inline std::vector<std::vector<std::string>> read_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open '" + path + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    rows.push_back(split_row(line));
  }
  return rows;
}

}  // namespace elastab::csv
