#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "tabforge/table/table.hpp"

namespace tabforge::table {

// RFC-4180 records: comma separated, double-quote quoting, CRLF or LF line ends.
// Each record carries the 1-based line number it started on.
struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;
};

std::vector<CsvRecord> parse_csv(std::istream& in);
std::string quote_csv_field(const std::string& field);

// Header must contain every schema column (extra columns are ignored).
// Empty or unparseable numerical cells become missing; empty categorical
// cells become missing; category labels are interned in first-seen order.
Table read_csv(std::istream& in, const TableSchema& schema);
Table load_csv(const std::string& path, const TableSchema& schema);

// Writes the schema header and rows. Numericals use shortest round-trip
// formatting; missing cells are written empty.
void write_csv(std::ostream& out, const Table& table);
void save_csv(const std::string& path, const Table& table);

std::string format_number(double v);

}  // namespace tabforge::table
