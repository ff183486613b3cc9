#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace pmi::csv {

struct Row {
  std::size_t line = 0;  // 1-based line of the row's first character
  std::vector<std::string> fields;
};

/// RFC 4180 reader: comma separated, double-quote quoting with "" escapes,
/// CRLF or LF line ends. Blank lines are skipped. A UTF-8 BOM is dropped.
std::vector<Row> read(std::istream& in);

/// Quotes a field only when it contains a comma, quote or line break.
std::string escape(std::string_view field);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace pmi::csv
