// Minimal RFC-4180-style CSV: comma separator, optional double-quote
// escaping, first row is a header. Doubles are written with enough digits
// to round-trip exactly.
#pragma once

#include <string>
#include <vector>

namespace bimba {

using CsvRow = std::vector<std::string>;

void write_csv(const std::string& path, const CsvRow& header,
               const std::vector<CsvRow>& rows);

// Returns all rows including the header. Throws std::runtime_error on
// unreadable files or malformed quoting.
std::vector<CsvRow> read_csv(const std::string& path);

std::string format_double(double v);
std::string csv_escape(const std::string& field);

}  // namespace bimba
