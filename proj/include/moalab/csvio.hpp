#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace moalab {

// Shortest representation that parses back to the same double (to_chars).
// Keeps CSV/JSON outputs byte-stable and round-trip exact.
std::string format_double(double value);

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);

  void header(const std::vector<std::string>& columns);
  CsvWriter& field(const std::string& value);
  CsvWriter& field(double value);
  CsvWriter& field(std::int64_t value);
  CsvWriter& field(int value) { return field(static_cast<std::int64_t>(value)); }
  void end_row();

 private:
  std::ofstream out_;
  bool row_started_ = false;
};

}  // namespace moalab
