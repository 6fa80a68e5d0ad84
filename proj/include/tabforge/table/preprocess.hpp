#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tabforge/nn/tensor.hpp"
#include "tabforge/table/table.hpp"

namespace tabforge::table {

inline constexpr std::size_t kMaxQuantileKnots = 1000;
inline constexpr double kNormalClip = 5.2;

double standard_normal_cdf(double z);
// Returns -inf / +inf at p = 0 / 1.
double standard_normal_quantile(double p);

/// Empirical-CDF to standard-normal transform for one numerical column.
/// `quantiles` is strictly increasing; `references` holds the matching CDF
/// positions (non-decreasing, in [0, 1]).
struct QuantileTransform {
  double fill = 0.0;  // training mean, substituted for missing cells
  std::vector<double> quantiles;
  std::vector<double> references;

  static QuantileTransform fit(std::vector<double> values);
  double empirical_cdf(double x) const;
  double forward(double x) const;
  double inverse(double z) const;
};

/// Category vocabulary of one categorical column. When the training data
/// had missing cells, the last vocabulary entry is the extra missing category.
struct CategoryEncoding {
  std::vector<std::string> vocabulary;
  bool has_missing = false;
  int majority = 0;

  std::size_t size() const noexcept { return vocabulary.size(); }
  int missing_index() const noexcept {
    return has_missing ? static_cast<int>(vocabulary.size()) - 1 : kMissingCategory;
  }
  // Unknown labels map to the majority category (with a warning).
  int encode(std::optional<std::string_view> label) const;
};

/// Model-ready view of a table: numerical columns as standard-normal scores,
/// categorical columns as vocabulary indices with no missing entries.
struct ProcessedTable {
  std::size_t rows = 0;
  nn::Tensor numerical;         // rows x M_num
  std::vector<int> categorical;  // rows x M_cat, row-major

  int category(std::size_t row, std::size_t block, std::size_t num_categorical) const {
    return categorical[row * num_categorical + block];
  }
};

struct PreprocessState {
  TableSchema schema;
  std::vector<QuantileTransform> numerical;
  std::vector<CategoryEncoding> categorical;

  std::vector<std::size_t> category_counts() const;

  nlohmann::json to_json() const;
  static PreprocessState from_json(const nlohmann::json& j);
};

PreprocessState fit_preprocess(const Table& table);
ProcessedTable apply_preprocess(const Table& table, const PreprocessState& state);
Table invert_preprocess(const ProcessedTable& processed, const PreprocessState& state);

}  // namespace tabforge::table
