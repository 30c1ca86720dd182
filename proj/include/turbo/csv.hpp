#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace turbo {

/// RFC-4180 output: CRLF line endings, fields quoted only when they contain
/// a comma, quote or line break, embedded quotes doubled.
std::string csv_field(const std::string& value);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace turbo
