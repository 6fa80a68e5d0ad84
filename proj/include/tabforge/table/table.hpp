#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace tabforge::table {

enum class ColumnKind { Numerical, Categorical };

std::string_view to_string(ColumnKind kind);
ColumnKind parse_column_kind(std::string_view text);

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Numerical;
  bool target = false;

  bool operator==(const ColumnSpec&) const = default;
};

/// Ordered column declarations. Numerical columns form the first token block
/// and categorical columns the second, each in declaration order.
class TableSchema {
 public:
  TableSchema() = default;
  explicit TableSchema(std::vector<ColumnSpec> columns);

  static TableSchema from_json(const nlohmann::json& j);
  static TableSchema load(const std::string& path);
  nlohmann::json to_json() const;

  const std::vector<ColumnSpec>& columns() const noexcept { return columns_; }
  std::size_t size() const noexcept { return columns_.size(); }
  std::size_t num_numerical() const noexcept { return numerical_.size(); }
  std::size_t num_categorical() const noexcept { return categorical_.size(); }

  // Schema positions of the numerical / categorical columns.
  const std::vector<std::size_t>& numerical_columns() const noexcept { return numerical_; }
  const std::vector<std::size_t>& categorical_columns() const noexcept { return categorical_; }

  // Position of a schema column inside its kind block.
  std::size_t block_index(std::size_t column) const { return block_index_.at(column); }
  // Token position: numerical block first, categorical block after it.
  std::size_t token_index(std::size_t column) const;

  std::optional<std::size_t> find(std::string_view name) const;
  std::optional<std::size_t> target() const noexcept { return target_; }

  bool operator==(const TableSchema& other) const { return columns_ == other.columns_; }

 private:
  std::vector<ColumnSpec> columns_;
  std::vector<std::size_t> numerical_;
  std::vector<std::size_t> categorical_;
  std::vector<std::size_t> block_index_;
  std::optional<std::size_t> target_;
};

inline constexpr int kMissingCategory = -1;

inline bool is_missing(double v) { return std::isnan(v); }
inline double missing_value() { return std::nan(""); }

/// Raw mixed-type rows. Numerical cells hold NaN when missing; categorical
/// cells hold an index into the column's label list or kMissingCategory.
class Table {
 public:
  Table() = default;
  explicit Table(TableSchema schema, std::size_t rows = 0);

  const TableSchema& schema() const noexcept { return schema_; }
  std::size_t rows() const noexcept { return rows_; }

  double numerical(std::size_t row, std::size_t block) const {
    return numerical_[row * schema_.num_numerical() + block];
  }
  double& numerical(std::size_t row, std::size_t block) {
    return numerical_[row * schema_.num_numerical() + block];
  }
  int categorical(std::size_t row, std::size_t block) const {
    return categorical_[row * schema_.num_categorical() + block];
  }
  int& categorical(std::size_t row, std::size_t block) {
    return categorical_[row * schema_.num_categorical() + block];
  }

  const std::vector<std::string>& labels(std::size_t block) const { return labels_.at(block); }
  // Index of `label` in the column's label list, appending it if unseen.
  int intern(std::size_t block, std::string_view label);
  std::optional<std::string_view> label(std::size_t row, std::size_t block) const;

  void append_row();
  // Numerical column values with missing cells dropped.
  std::vector<double> numerical_column(std::size_t block) const;
  // Categorical column as labels; missing cells become "".
  std::vector<std::string> categorical_column(std::size_t block) const;

  // Rows [first, first + count) as a new table sharing the label lists.
  Table slice(std::size_t first, std::size_t count) const;
  Table select_rows(const std::vector<std::size_t>& indices) const;

 private:
  TableSchema schema_;
  std::size_t rows_ = 0;
  std::vector<double> numerical_;
  std::vector<int> categorical_;
  std::vector<std::vector<std::string>> labels_;
};

}  // namespace tabforge::table
