#include "tabforge/table/table.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "tabforge/error.hpp"

namespace tabforge::table {

std::string_view to_string(ColumnKind kind) {
  return kind == ColumnKind::Numerical ? "numerical" : "categorical";
}

ColumnKind parse_column_kind(std::string_view text) {
  if (text == "numerical" || text == "num") return ColumnKind::Numerical;
  if (text == "categorical" || text == "cat") return ColumnKind::Categorical;
  throw SchemaError("unknown column kind '" + std::string(text) + "'");
}

TableSchema::TableSchema(std::vector<ColumnSpec> columns) : columns_(std::move(columns)) {
  if (columns_.empty()) throw SchemaError("schema must declare at least one column");
  std::set<std::string> seen;
  block_index_.resize(columns_.size());
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    const auto& c = columns_[i];
    if (c.name.empty()) throw SchemaError("column " + std::to_string(i) + " has an empty name");
    if (!seen.insert(c.name).second) throw SchemaError("duplicate column name '" + c.name + "'");
    if (c.target) {
      if (target_) throw SchemaError("more than one target column");
      target_ = i;
    }
    auto& block = c.kind == ColumnKind::Numerical ? numerical_ : categorical_;
    block_index_[i] = block.size();
    block.push_back(i);
  }
}

TableSchema TableSchema::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("columns") || !j["columns"].is_array()) {
    throw SchemaError("schema JSON must be an object with a \"columns\" array");
  }
  std::vector<ColumnSpec> cols;
  for (const auto& c : j["columns"]) {
    if (!c.contains("name") || !c.contains("kind")) {
      throw SchemaError("schema column entries need \"name\" and \"kind\"");
    }
    ColumnSpec spec;
    spec.name = c["name"].get<std::string>();
    spec.kind = parse_column_kind(c["kind"].get<std::string>());
    spec.target = c.value("target", false);
    cols.push_back(std::move(spec));
  }
  return TableSchema(std::move(cols));
}

TableSchema TableSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open schema file " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("invalid schema file " + path + ": " + e.what());
  }
}

nlohmann::json TableSchema::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns_) {
    cols.push_back({{"name", c.name}, {"kind", to_string(c.kind)}, {"target", c.target}});
  }
  return {{"columns", cols}};
}

std::size_t TableSchema::token_index(std::size_t column) const {
  const auto& c = columns_.at(column);
  return c.kind == ColumnKind::Numerical ? block_index_[column]
                                         : num_numerical() + block_index_[column];
}

std::optional<std::size_t> TableSchema::find(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].name == name) return i;
  }
  return std::nullopt;
}

Table::Table(TableSchema schema, std::size_t rows)
    : schema_(std::move(schema)),
      rows_(rows),
      numerical_(rows * schema_.num_numerical(), missing_value()),
      categorical_(rows * schema_.num_categorical(), kMissingCategory),
      labels_(schema_.num_categorical()) {}

int Table::intern(std::size_t block, std::string_view label) {
  auto& list = labels_.at(block);
  const auto it = std::find(list.begin(), list.end(), label);
  if (it != list.end()) return static_cast<int>(it - list.begin());
  list.emplace_back(label);
  return static_cast<int>(list.size() - 1);
}

std::optional<std::string_view> Table::label(std::size_t row, std::size_t block) const {
  const int idx = categorical(row, block);
  if (idx == kMissingCategory) return std::nullopt;
  return labels_[block][static_cast<std::size_t>(idx)];
}

void Table::append_row() {
  ++rows_;
  numerical_.resize(rows_ * schema_.num_numerical(), missing_value());
  categorical_.resize(rows_ * schema_.num_categorical(), kMissingCategory);
}

std::vector<double> Table::numerical_column(std::size_t block) const {
  std::vector<double> out;
  out.reserve(rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double v = numerical(r, block);
    if (!is_missing(v)) out.push_back(v);
  }
  return out;
}

std::vector<std::string> Table::categorical_column(std::size_t block) const {
  std::vector<std::string> out;
  out.reserve(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out.emplace_back(label(r, block).value_or(""));
  return out;
}

Table Table::slice(std::size_t first, std::size_t count) const {
  if (first + count > rows_) throw InputError("row slice out of range");
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = first + i;
  return select_rows(idx);
}

Table Table::select_rows(const std::vector<std::size_t>& indices) const {
  Table out(schema_, indices.size());
  out.labels_ = labels_;
  const std::size_t nn = schema_.num_numerical();
  const std::size_t nc = schema_.num_categorical();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t r = indices[i];
    if (r >= rows_) throw InputError("row index out of range");
    std::copy_n(numerical_.begin() + static_cast<std::ptrdiff_t>(r * nn), nn,
                out.numerical_.begin() + static_cast<std::ptrdiff_t>(i * nn));
    std::copy_n(categorical_.begin() + static_cast<std::ptrdiff_t>(r * nc), nc,
                out.categorical_.begin() + static_cast<std::ptrdiff_t>(i * nc));
  }
  return out;
}

}  // namespace tabforge::table
