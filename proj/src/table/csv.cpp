#include "tabforge/table/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include "tabforge/error.hpp"

namespace tabforge::table {

std::vector<CsvRecord> parse_csv(std::istream& in) {
  std::vector<CsvRecord> records;
  CsvRecord current;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;  // distinguishes "" (empty row) from an empty field
  std::size_t line = 1;
  current.line = 1;

  const auto end_record = [&] {
    if (field_started || !current.fields.empty()) {
      current.fields.push_back(std::move(field));
      records.push_back(std::move(current));
    }
    current = CsvRecord{};
    field.clear();
    field_started = false;
  };

  char ch;
  while (in.get(ch)) {
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line;
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (!field.empty()) throw ParseError("unexpected quote inside unquoted field", line);
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        current.fields.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        if (in.peek() == '\n') break;
        [[fallthrough]];
      case '\n':
        end_record();
        ++line;
        current.line = line;
        break;
      default:
        if (current.fields.empty() && !field_started && field.empty()) current.line = line;
        field.push_back(ch);
        field_started = true;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field", line);
  end_record();
  return records;
}

std::string quote_csv_field(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return missing_value();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return missing_value();
  return v;
}

}  // namespace

Table read_csv(std::istream& in, const TableSchema& schema) {
  const auto records = parse_csv(in);
  if (records.empty()) throw ParseError("CSV input has no header row", 1);

  const auto& header = records.front().fields;
  std::set<std::string> seen;
  for (const auto& h : header) {
    if (!seen.insert(h).second) throw SchemaError("duplicate CSV header '" + h + "'");
  }
  std::vector<std::size_t> position(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& name = schema.columns()[c].name;
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("CSV is missing column '" + name + "'");
    position[c] = static_cast<std::size_t>(it - header.begin());
  }

  Table table(schema);
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(rec.fields.size()),
                       rec.line);
    }
    table.append_row();
    const std::size_t r = table.rows() - 1;
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const std::string& cell = rec.fields[position[c]];
      const std::size_t block = schema.block_index(c);
      if (schema.columns()[c].kind == ColumnKind::Numerical) {
        table.numerical(r, block) = parse_number(cell);
      } else if (!cell.empty()) {
        table.categorical(r, block) = table.intern(block, cell);
      }
    }
  }
  return table;
}

Table load_csv(const std::string& path, const TableSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open CSV file " + path);
  return read_csv(in, schema);
}

std::string format_number(double v) {
  if (is_missing(v)) return {};
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_csv(std::ostream& out, const Table& table) {
  const auto& schema = table.schema();
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (c) out << ',';
    out << quote_csv_field(schema.columns()[c].name);
  }
  out << '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (c) out << ',';
      const std::size_t block = schema.block_index(c);
      if (schema.columns()[c].kind == ColumnKind::Numerical) {
        out << format_number(table.numerical(r, block));
      } else if (auto label = table.label(r, block)) {
        out << quote_csv_field(std::string(*label));
      }
    }
    out << '\n';
  }
}

void save_csv(const std::string& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write CSV file " + path);
  write_csv(out, table);
}

}  // namespace tabforge::table
