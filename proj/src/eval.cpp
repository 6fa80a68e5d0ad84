#include "tabforge/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "tabforge/common.hpp"
#include "tabforge/error.hpp"
#include "tabforge/table/csv.hpp"
#include "tabforge/table/preprocess.hpp"

namespace tabforge::eval {

namespace {

void require_nonempty(std::size_t a, std::size_t b, const char* metric) {
  if (a == 0 || b == 0) throw InputError(std::string(metric) + " needs two nonempty samples");
}

void require_same_length(std::size_t a, std::size_t b, const char* metric) {
  if (a != b) throw InputError(std::string(metric) + " needs paired columns of equal length");
}

std::vector<double> sorted_finite(std::span<const double> values, const char* metric) {
  std::vector<double> out(values.begin(), values.end());
  for (double v : out) {
    if (!std::isfinite(v)) throw InputError(std::string(metric) + " got a non-finite value");
  }
  std::sort(out.begin(), out.end());
  return out;
}

void require_same_schema(const table::Table& real, const table::Table& synth) {
  if (!(real.schema() == synth.schema())) {
    throw InputError("real and synthetic tables have different schemas");
  }
}

double mean_score(double sum, std::size_t n) { return n == 0 ? 0.0 : sum / static_cast<double>(n); }

// Rows where neither cell of the pair is missing.
void paired_numerical(const table::Table& t, std::size_t a, std::size_t b, std::vector<double>& x,
                      std::vector<double>& y) {
  x.clear();
  y.clear();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const double u = t.numerical(r, a);
    const double v = t.numerical(r, b);
    if (table::is_missing(u) || table::is_missing(v)) continue;
    x.push_back(u);
    y.push_back(v);
  }
}

std::vector<double> numerical_cells(const table::Table& t, std::size_t block) {
  std::vector<double> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out[r] = t.numerical(r, block);
  return out;
}

}  // namespace

double kst(std::span<const double> real, std::span<const double> synth) {
  require_nonempty(real.size(), synth.size(), "KST");
  const auto r = sorted_finite(real, "KST");
  const auto s = sorted_finite(synth, "KST");
  const double nr = static_cast<double>(r.size());
  const double ns = static_cast<double>(s.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double worst = 0.0;
  // Walk the merged support; both CDFs are evaluated after each distinct value.
  while (i < r.size() || j < s.size()) {
    const double x = j == s.size() || (i < r.size() && r[i] <= s[j]) ? r[i] : s[j];
    while (i < r.size() && r[i] == x) ++i;
    while (j < s.size() && s[j] == x) ++j;
    worst = std::max(worst, std::abs(static_cast<double>(i) / nr - static_cast<double>(j) / ns));
  }
  return worst;
}

double tvd(std::span<const std::string> real, std::span<const std::string> synth) {
  require_nonempty(real.size(), synth.size(), "TVD");
  std::map<std::string_view, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& v : real) ++counts[v].first;
  for (const auto& v : synth) ++counts[v].second;
  const double nr = static_cast<double>(real.size());
  const double ns = static_cast<double>(synth.size());
  double sum = 0.0;
  for (const auto& [label, c] : counts) {
    sum += std::abs(static_cast<double>(c.first) / nr - static_cast<double>(c.second) / ns);
  }
  return 0.5 * sum;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), "Pearson");
  if (x.size() < 2) throw InputError("Pearson correlation needs at least two rows");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    throw DomainError("correlation is undefined for a constant column");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double pearson_pair_error(std::span<const double> real_a, std::span<const double> real_b,
                          std::span<const double> synth_a, std::span<const double> synth_b) {
  require_nonempty(real_a.size(), synth_a.size(), "Pearson score");
  return 0.5 * std::abs(pearson(real_a, real_b) - pearson(synth_a, synth_b));
}

double contingency_pair_error(std::span<const std::string> real_a,
                              std::span<const std::string> real_b,
                              std::span<const std::string> synth_a,
                              std::span<const std::string> synth_b) {
  require_same_length(real_a.size(), real_b.size(), "contingency");
  require_same_length(synth_a.size(), synth_b.size(), "contingency");
  require_nonempty(real_a.size(), synth_a.size(), "contingency");
  using Key = std::pair<std::string_view, std::string_view>;
  std::map<Key, std::pair<std::size_t, std::size_t>> counts;
  for (std::size_t i = 0; i < real_a.size(); ++i) ++counts[Key{real_a[i], real_b[i]}].first;
  for (std::size_t i = 0; i < synth_a.size(); ++i) ++counts[Key{synth_a[i], synth_b[i]}].second;
  const double nr = static_cast<double>(real_a.size());
  const double ns = static_cast<double>(synth_a.size());
  double sum = 0.0;
  for (const auto& [key, c] : counts) {
    sum += std::abs(static_cast<double>(c.first) / nr - static_cast<double>(c.second) / ns);
  }
  return 0.5 * sum;
}

Buckets Buckets::fit(std::span<const double> real, std::size_t n_buckets) {
  if (n_buckets < 2) throw InputError("bucketing needs at least two buckets");
  std::vector<double> v;
  v.reserve(real.size());
  for (double x : real) {
    if (!table::is_missing(x)) v.push_back(x);
  }
  if (v.empty()) throw InputError("cannot fit buckets on an empty column");
  std::sort(v.begin(), v.end());
  std::size_t distinct = 1;
  for (std::size_t i = 1; i < v.size(); ++i) distinct += v[i] != v[i - 1];
  std::size_t n = n_buckets;
  if (distinct < n) {
    warn("column has " + std::to_string(distinct) + " distinct values; using " +
         std::to_string(distinct) + " buckets instead of " + std::to_string(n_buckets));
    n = distinct;
  }
  Buckets b;
  const double last = static_cast<double>(v.size() - 1);
  for (std::size_t k = 1; k < n; ++k) {
    // Type-7 quantile at k/n.
    const double pos = last * static_cast<double>(k) / static_cast<double>(n);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double edge = v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    if (b.edges.empty() || edge > b.edges.back()) b.edges.push_back(edge);
  }
  return b;
}

std::size_t Buckets::bucket(double x) const {
  return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), x) - edges.begin());
}

std::vector<std::string> Buckets::apply(std::span<const double> values) const {
  std::vector<std::string> out;
  out.reserve(values.size());
  for (double x : values) out.push_back(table::is_missing(x) ? "" : "b" + std::to_string(bucket(x)));
  return out;
}

ColumnDensityReport column_density_report(const table::Table& real, const table::Table& synth) {
  require_same_schema(real, synth);
  const auto& schema = real.schema();
  ColumnDensityReport report;
  double sum = 0.0;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& spec = schema.columns()[c];
    const std::size_t b = schema.block_index(c);
    ColumnScore score{spec.name, "", 0.0};
    if (spec.kind == table::ColumnKind::Numerical) {
      score.metric = "kst";
      score.score = kst(real.numerical_column(b), synth.numerical_column(b));
    } else {
      score.metric = "tvd";
      score.score = tvd(real.categorical_column(b), synth.categorical_column(b));
    }
    sum += score.score;
    report.columns.push_back(std::move(score));
  }
  report.error_percent = 100.0 * mean_score(sum, report.columns.size());
  return report;
}

PairCorrelationReport pair_correlation_report(const table::Table& real, const table::Table& synth,
                                              std::size_t n_buckets) {
  require_same_schema(real, synth);
  const auto& schema = real.schema();
  if (schema.size() < 2) throw InputError("pair correlation needs at least two columns");
  const auto is_num = [&](std::size_t c) {
    return schema.columns()[c].kind == table::ColumnKind::Numerical;
  };
  // Categorical view of every column: labels, or real-fitted buckets.
  std::vector<std::vector<std::string>> real_cat(schema.size());
  std::vector<std::vector<std::string>> synth_cat(schema.size());
  bool any_mixed = false;
  for (std::size_t a = 0; a < schema.size(); ++a)
    for (std::size_t b = a + 1; b < schema.size(); ++b) any_mixed |= is_num(a) != is_num(b);
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const std::size_t blk = schema.block_index(c);
    if (!is_num(c)) {
      real_cat[c] = real.categorical_column(blk);
      synth_cat[c] = synth.categorical_column(blk);
    } else if (any_mixed) {
      const auto buckets = Buckets::fit(real.numerical_column(blk), n_buckets);
      real_cat[c] = buckets.apply(numerical_cells(real, blk));
      synth_cat[c] = buckets.apply(numerical_cells(synth, blk));
    }
  }
  PairCorrelationReport report;
  double sum = 0.0;
  std::vector<double> rx, ry, sx, sy;
  for (std::size_t a = 0; a < schema.size(); ++a) {
    for (std::size_t b = a + 1; b < schema.size(); ++b) {
      PairScore score{schema.columns()[a].name, schema.columns()[b].name, "", 0.0};
      if (is_num(a) && is_num(b)) {
        score.kind = "num";
        paired_numerical(real, schema.block_index(a), schema.block_index(b), rx, ry);
        paired_numerical(synth, schema.block_index(a), schema.block_index(b), sx, sy);
        score.score = pearson_pair_error(rx, ry, sx, sy);
      } else {
        score.kind = is_num(a) || is_num(b) ? "mixed" : "cat";
        score.score = contingency_pair_error(real_cat[a], real_cat[b], synth_cat[a], synth_cat[b]);
      }
      sum += score.score;
      report.pairs.push_back(std::move(score));
    }
  }
  report.error_percent = 100.0 * mean_score(sum, report.pairs.size());
  return report;
}

double roc_auc(std::span<const double> scores, std::span<const int> positive) {
  require_same_length(scores.size(), positive.size(), "AUC");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += mid_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw InputError("AUC needs both positive and negative examples");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

constexpr double kRidge = 1e-2;
constexpr int kNewtonSteps = 50;

/// One-hot categorical and quantile-scored numerical features, fitted on the
/// real training rows and applied unchanged to every source.
struct Featurizer {
  table::PreprocessState state;
  std::size_t target = 0;  // schema position

  std::size_t width() const {
    const auto& schema = state.schema;
    std::size_t w = 0;
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (c == target) continue;
      const std::size_t b = schema.block_index(c);
      w += schema.columns()[c].kind == table::ColumnKind::Numerical ? 1 : state.categorical[b].size();
    }
    return w;
  }

  Matrix features(const table::Table& t, const std::vector<std::size_t>& rows) const {
    const auto& schema = state.schema;
    Matrix x = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width() + 1));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      Eigen::Index col = 0;
      for (std::size_t c = 0; c < schema.size(); ++c) {
        if (c == target) continue;
        const std::size_t b = schema.block_index(c);
        if (schema.columns()[c].kind == table::ColumnKind::Numerical) {
          const auto& q = state.numerical[b];
          const double v = t.numerical(rows[i], b);
          x(r, col++) = q.forward(table::is_missing(v) ? q.fill : v);
        } else {
          const auto& enc = state.categorical[b];
          x(r, col + enc.encode(t.label(rows[i], b))) = 1.0;
          col += static_cast<Eigen::Index>(enc.size());
        }
      }
      x(r, col) = 1.0;  // intercept
    }
    return x;
  }
};

Vector fit_logistic(const Matrix& x, const Vector& y) {
  Vector w = Vector::Zero(x.cols());
  Matrix penalty = kRidge * Matrix::Identity(x.cols(), x.cols());
  penalty(x.cols() - 1, x.cols() - 1) = 0.0;
  for (int step = 0; step < kNewtonSteps; ++step) {
    const Vector logits = x * w;
    // Scalar exp keeps results independent of vector alignment.
    Vector p(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) p(i) = 1.0 / (1.0 + std::exp(-logits(i)));
    const Vector grad = x.transpose() * (p - y) + penalty * w;
    const Vector curv = (p.array() * (1.0 - p.array())).max(1e-10).matrix();
    const Matrix hess = x.transpose() * curv.asDiagonal() * x + penalty +
                        1e-9 * Matrix::Identity(x.cols(), x.cols());
    const Vector delta = hess.ldlt().solve(grad);
    w -= delta;
    if (delta.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  return w;
}

Vector fit_ridge(const Matrix& x, const Vector& y) {
  Matrix a = x.transpose() * x;
  for (Eigen::Index i = 0; i + 1 < x.cols(); ++i) a(i, i) += kRidge;
  return a.ldlt().solve(x.transpose() * y);
}

std::vector<std::size_t> rows_with_target(const table::Table& t, std::size_t block, bool numerical) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const bool missing = numerical ? table::is_missing(t.numerical(r, block))
                                   : t.categorical(r, block) == table::kMissingCategory;
    if (!missing) rows.push_back(r);
  }
  return rows;
}

}  // namespace

MleResult mle_lite(const table::Table& real_train, const table::Table& synth_train,
                   const table::Table& real_test) {
  require_same_schema(real_train, synth_train);
  require_same_schema(real_train, real_test);
  const auto& schema = real_train.schema();
  const auto target = schema.target();
  if (!target) throw InputError("machine-learning efficiency needs a target column in the schema");
  const std::size_t tb = schema.block_index(*target);
  const bool regression = schema.columns()[*target].kind == table::ColumnKind::Numerical;

  Featurizer f{table::fit_preprocess(real_train), *target};
  const auto train_rows = rows_with_target(real_train, tb, regression);
  const auto synth_rows = rows_with_target(synth_train, tb, regression);
  const auto test_rows = rows_with_target(real_test, tb, regression);
  if (train_rows.empty() || synth_rows.empty() || test_rows.empty()) {
    throw InputError("a training or test source has no labelled rows");
  }
  const auto x_test = f.features(real_test, test_rows);

  MleResult result;
  if (regression) {
    result.task = "regression";
    const auto values = [&](const table::Table& t, const std::vector<std::size_t>& rows) {
      Vector y(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) y(static_cast<Eigen::Index>(i)) = t.numerical(rows[i], tb);
      return y;
    };
    const Vector y_real = values(real_train, train_rows);
    const double mean = y_real.mean();
    const double sd = std::sqrt((y_real.array() - mean).square().mean());
    if (!(sd > 0.0)) throw InputError("regression target is constant in the real training rows");
    const auto standardize = [&](const Vector& y) { return Vector((y.array() - mean) / sd); };
    const Vector y_test = standardize(values(real_test, test_rows));
    const auto rmse = [&](const table::Table& t, const std::vector<std::size_t>& rows) {
      const Vector w = fit_ridge(f.features(t, rows), standardize(values(t, rows)));
      return std::sqrt((x_test * w - y_test).squaredNorm() / static_cast<double>(test_rows.size()));
    };
    result.real = rmse(real_train, train_rows);
    result.synth = rmse(synth_train, synth_rows);
    return result;
  }

  result.task = "classification";
  const auto& enc = f.state.categorical[tb];
  const auto labels = [&](const table::Table& t, const std::vector<std::size_t>& rows) {
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = enc.encode(t.label(rows[i], tb));
    return y;
  };
  const auto y_test = labels(real_test, test_rows);
  const auto auc = [&](const table::Table& t, const std::vector<std::size_t>& rows) {
    const auto y = labels(t, rows);
    if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y.front(); })) {
      throw InputError("classification target has a single class in a training source");
    }
    const Matrix x = f.features(t, rows);
    const std::size_t classes = enc.size();
    // Binary: one model for class 1. Otherwise one-vs-rest, macro-averaged
    // over classes that have both positives and negatives in the test rows.
    const std::size_t first = classes == 2 ? 1 : 0;
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t k = first; k < classes; ++k) {
      std::vector<int> pos(y_test.size());
      for (std::size_t i = 0; i < y_test.size(); ++i) pos[i] = y_test[i] == static_cast<int>(k);
      const auto hits = std::count(pos.begin(), pos.end(), 1);
      if (hits == 0 || hits == static_cast<std::ptrdiff_t>(pos.size())) continue;
      Vector target_k(x.rows());
      for (std::size_t i = 0; i < y.size(); ++i) target_k(static_cast<Eigen::Index>(i)) = y[i] == static_cast<int>(k);
      const Vector scores = x_test * fit_logistic(x, target_k);
      sum += roc_auc(std::span(scores.data(), static_cast<std::size_t>(scores.size())), pos);
      ++used;
    }
    if (used == 0) throw InputError("test rows contain a single class");
    return sum / static_cast<double>(used);
  };
  result.real = auc(real_train, train_rows);
  result.synth = auc(synth_train, synth_rows);
  return result;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : report.density.columns) {
    cols.push_back({{"column", c.column}, {"metric", c.metric}, {"score", c.score}});
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : report.pairs.pairs) {
    pairs.push_back({{"column_a", p.column_a}, {"column_b", p.column_b}, {"kind", p.kind}, {"score", p.score}});
  }
  return {{"column_density", {{"error_percent", report.density.error_percent}, {"columns", cols}}},
          {"pair_correlation", {{"error_percent", report.pairs.error_percent}, {"pairs", pairs}}}};
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "metric,column,score\n";
  for (const auto& c : report.density.columns) {
    out << c.metric << ',' << table::quote_csv_field(c.column) << ',' << table::format_number(c.score) << '\n';
  }
  for (const auto& p : report.pairs.pairs) {
    out << (p.kind == "num" ? "pearson" : "contingency") << ','
        << table::quote_csv_field(p.column_a + "|" + p.column_b) << ',' << table::format_number(p.score)
        << '\n';
  }
  out << "column_density_error_percent,," << table::format_number(report.density.error_percent) << '\n';
  out << "pair_correlation_error_percent,," << table::format_number(report.pairs.error_percent) << '\n';
}

}  // namespace tabforge::eval
