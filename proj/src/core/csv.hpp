#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace ph {

// Fixed-precision formatting so logs are byte-stable across runs.
inline std::string fmt_f(double x, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, x);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : f_(path) {
    if (!f_) throw data_error("cannot open for writing: " + path);
  }

  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) f_ << ',';
      f_ << cells[i];
    }
    f_ << '\n';
    if (!f_) throw data_error("csv write failed");
  }

  void flush() { f_.flush(); }

 private:
  std::ofstream f_;
};

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("missing file: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace ph
