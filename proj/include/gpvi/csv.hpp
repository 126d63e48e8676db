#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gpvi/tensor.hpp"

namespace gpvi {

/// CSV cell formatting: floats carry 17 significant digits so files
/// round-trip bit-exactly.
inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter() = default;

  void open(const std::filesystem::path& path, const std::vector<std::string>& header) {
    out_.open(path);
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
    cols_ = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) out_ << ',';
      out_ << header[i];
    }
    out_ << '\n';
  }

  void row(const std::vector<std::string>& cells) {
    require(cells.size() == cols_, "csv row width mismatch");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
  std::size_t cols_ = 0;
};

}  // namespace gpvi
