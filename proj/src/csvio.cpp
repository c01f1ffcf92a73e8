#include "moalab/csvio.hpp"

#include <charconv>

#include "moalab/errors.hpp"

namespace moalab {

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) raise(Errc::io_error, "cannot write " + path.string());
}

void CsvWriter::header(const std::vector<std::string>& columns) {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) out_ << ',';
    out_ << columns[i];
  }
  out_ << '\n';
}

CsvWriter& CsvWriter::field(const std::string& value) {
  if (row_started_) out_ << ',';
  out_ << value;
  row_started_ = true;
  return *this;
}

CsvWriter& CsvWriter::field(double value) { return field(format_double(value)); }

CsvWriter& CsvWriter::field(std::int64_t value) { return field(std::to_string(value)); }

void CsvWriter::end_row() {
  out_ << '\n';
  row_started_ = false;
}

}  // namespace moalab
