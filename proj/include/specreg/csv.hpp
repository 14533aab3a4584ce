#ifndef SPECREG_CSV_HPP
#define SPECREG_CSV_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace specreg {

// Shortest round-trip decimal form: output is bitwise reproducible for
// bitwise-equal inputs, which the determinism guarantees lean on.
inline std::string num_str(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
inline std::string num_str(float v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}
inline std::string num_str(std::size_t v) { return std::to_string(v); }

// Write-to-temp then rename, so partially written artifacts never appear
// under the final name.
inline void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << contents;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename failed for " + path);
}

class CsvTable {
 public:
  explicit CsvTable(std::string header) : header_(std::move(header)) {}

  void add_row(const std::vector<std::string>& cells) {
    std::string row;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) row += ',';
      row += cells[i];
    }
    rows_.push_back(std::move(row));
  }

  const std::string& header() const { return header_; }
  std::size_t row_count() const { return rows_.size(); }

  std::string str() const {
    std::string out = header_ + "\n";
    for (const auto& r : rows_) out += r + "\n";
    return out;
  }

  void write(const std::string& path) const { write_file_atomic(path, str()); }

 private:
  std::string header_;
  std::vector<std::string> rows_;
};

// Header-row check for consumers of the emitted tables.
inline bool csv_header_matches(const std::string& path, const std::string& expected) {
  std::ifstream in(path);
  std::string first;
  return in && std::getline(in, first) && first == expected;
}

}  // namespace specreg

#endif  // SPECREG_CSV_HPP
