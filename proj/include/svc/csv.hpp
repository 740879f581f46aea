#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace svc {

// Shortest round-trip decimal form with '.' separator, locale independent.
std::string format_double(double x);

// RFC-4180 writer: CRLF-free rows ("\n"), fields quoted only when needed.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void header(const std::vector<std::string>& names);

  CsvWriter& field(std::string_view text);
  CsvWriter& field(double value);
  CsvWriter& field(long long value);
  CsvWriter& field(std::size_t value) { return field(static_cast<long long>(value)); }
  CsvWriter& field(int value) { return field(static_cast<long long>(value)); }
  void end_row();

 private:
  void separator();

  std::ostream& out_;
  bool row_open_ = false;
};

// Parses one RFC-4180 document into rows of fields.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace svc
