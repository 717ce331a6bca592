#include "bimba/csv.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace bimba {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

void write_csv(const std::string& path, const CsvRow& header,
               const std::vector<CsvRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  auto put_row = [&f](const CsvRow& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) f << ',';
      f << csv_escape(row[i]);
    }
    f << '\n';
  };
  put_row(header);
  for (const CsvRow& row : rows) put_row(row);
  if (!f) throw std::runtime_error(path + ": write failed");
}

std::vector<CsvRow> read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for reading");
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());

  std::vector<CsvRow> rows;
  CsvRow row;
  std::string field;
  bool quoted = false;
  bool row_started = false;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < n && text[i + 1] == '"') {
          field += '"';
          i += 2;
        } else {
          quoted = false;
          ++i;
        }
      } else {
        field += c;
        ++i;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty())
          throw std::runtime_error(path + ": stray quote inside field");
        quoted = true;
        row_started = true;
        ++i;
        break;
      case ',':
        row.push_back(field);
        field.clear();
        row_started = true;
        ++i;
        break;
      case '\r':
        ++i;
        break;
      case '\n':
        if (row_started || !field.empty() || !row.empty()) {
          row.push_back(field);
          rows.push_back(row);
        }
        field.clear();
        row.clear();
        row_started = false;
        ++i;
        break;
      default:
        field += c;
        row_started = true;
        ++i;
    }
  }
  if (quoted) throw std::runtime_error(path + ": unterminated quoted field");
  if (row_started || !field.empty() || !row.empty()) {
    row.push_back(field);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace bimba
