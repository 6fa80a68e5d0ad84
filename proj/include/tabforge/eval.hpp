#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tabforge/table/table.hpp"

namespace tabforge::eval {

// sup_x |F_real(x) - F_synth(x)| over the two empirical CDFs.
double kst(std::span<const double> real, std::span<const double> synth);

// (1/2) sum over the union of categories of |R(w) - S(w)|.
double tvd(std::span<const std::string> real, std::span<const std::string> synth);

// Pearson correlation; throws DomainError when either column is constant.
double pearson(std::span<const double> x, std::span<const double> y);

// |rho_real(a, b) - rho_synth(a, b)| / 2.
double pearson_pair_error(std::span<const double> real_a, std::span<const double> real_b,
                          std::span<const double> synth_a, std::span<const double> synth_b);

// TVD between the joint (a, b) frequency tables.
double contingency_pair_error(std::span<const std::string> real_a,
                              std::span<const std::string> real_b,
                              std::span<const std::string> synth_a,
                              std::span<const std::string> synth_b);

/// Quantile bins fitted on a real column. A value's bucket is the number of
/// edges strictly below it, so a value on an edge joins the lower bucket.
struct Buckets {
  std::vector<double> edges;  // strictly increasing

  static Buckets fit(std::span<const double> real, std::size_t n_buckets);
  std::size_t count() const noexcept { return edges.size() + 1; }
  std::size_t bucket(double x) const;
  // Bucket labels "b0", "b1", ...; missing values become "".
  std::vector<std::string> apply(std::span<const double> values) const;
};

inline constexpr std::size_t kDefaultBuckets = 20;

struct ColumnScore {
  std::string column;
  std::string metric;  // "kst" or "tvd"
  double score = 0.0;
};

struct ColumnDensityReport {
  std::vector<ColumnScore> columns;
  double error_percent = 0.0;  // mean score x 100
};

struct PairScore {
  std::string column_a;
  std::string column_b;
  std::string kind;  // "num", "cat" or "mixed"
  double score = 0.0;
};

struct PairCorrelationReport {
  std::vector<PairScore> pairs;
  double error_percent = 0.0;
};

ColumnDensityReport column_density_report(const table::Table& real, const table::Table& synth);
PairCorrelationReport pair_correlation_report(const table::Table& real, const table::Table& synth,
                                              std::size_t n_buckets = kDefaultBuckets);

struct MleResult {
  std::string task;    // "classification" (AUC) or "regression" (RMSE)
  double real = 0.0;   // score of the model trained on real rows
  double synth = 0.0;  // score of the model trained on synthetic rows
  double gap() const { return real - synth; }
};

// Trains the same model on real_train and on synth_train, scores both on
// real_test. Categorical target: logistic regression, one-vs-rest macro AUC.
// Numerical target: ridge regression on the standardized target, RMSE.
MleResult mle_lite(const table::Table& real_train, const table::Table& synth_train,
                   const table::Table& real_test);

// Area under the ROC curve with tied scores counted as one half.
double roc_auc(std::span<const double> scores, std::span<const int> positive);

struct EvalReport {
  ColumnDensityReport density;
  PairCorrelationReport pairs;
};

nlohmann::json to_json(const EvalReport& report);
// One line per score: metric,column,score (pairs as "a|b").
void write_report_csv(std::ostream& out, const EvalReport& report);

}  // namespace tabforge::eval
