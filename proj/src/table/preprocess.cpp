#include "tabforge/table/preprocess.hpp"

#include <algorithm>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "tabforge/common.hpp"
#include "tabforge/error.hpp"

namespace tabforge::table {

double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double standard_normal_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
}

namespace {

// Linear interpolation between order statistics (position p * (n - 1)).
double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? sorted[lo] : sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Piecewise-linear map from xs to ys; xs strictly increasing, x inside [xs.front(), xs.back()].
double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  if (it == xs.begin()) return ys.front();
  if (it == xs.end()) return ys.back();
  const auto k = static_cast<std::size_t>(it - xs.begin()) - 1;
  const double t = (x - xs[k]) / (xs[k + 1] - xs[k]);
  return ys[k] + t * (ys[k + 1] - ys[k]);
}

}  // namespace

QuantileTransform QuantileTransform::fit(std::vector<double> values) {
  std::erase_if(values, [](double v) { return is_missing(v); });
  if (values.empty()) throw FitError("numerical column has no non-missing values");
  std::sort(values.begin(), values.end());

  QuantileTransform qt;
  qt.fill = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());

  std::size_t n_distinct = 1;
  for (std::size_t i = 1; i < values.size(); ++i) n_distinct += values[i] != values[i - 1];
  const std::size_t knots = std::min(kMaxQuantileKnots, n_distinct);

  if (knots == 1) {
    qt.quantiles = {values.front()};
    qt.references = {0.5};
    return qt;
  }
  // Uniform grid in CDF space, then collapse runs of equal quantile values
  // into one knot positioned at the mean of their CDF positions.
  for (std::size_t k = 0; k < knots; ++k) {
    const double ref = static_cast<double>(k) / static_cast<double>(knots - 1);
    const double q = sorted_quantile(values, ref);
    if (!qt.quantiles.empty() && q == qt.quantiles.back()) {
      std::size_t run = 1;
      for (std::size_t j = k; j-- > 0;) {
        if (sorted_quantile(values, static_cast<double>(j) / static_cast<double>(knots - 1)) != q) {
          break;
        }
        ++run;
      }
      qt.references.back() += (ref - qt.references.back()) / static_cast<double>(run);
      continue;
    }
    qt.quantiles.push_back(q);
    qt.references.push_back(ref);
  }
  return qt;
}

double QuantileTransform::empirical_cdf(double x) const {
  if (quantiles.size() == 1) return 0.5;
  if (x < quantiles.front()) return 0.0;
  if (x > quantiles.back()) return 1.0;
  return interpolate(quantiles, references, x);
}

double QuantileTransform::forward(double x) const {
  if (is_missing(x)) x = fill;
  return std::clamp(standard_normal_quantile(empirical_cdf(x)), -kNormalClip, kNormalClip);
}

double QuantileTransform::inverse(double z) const {
  if (!std::isfinite(z)) throw NumericError("cannot invert non-finite quantile score");
  if (quantiles.size() == 1) return quantiles.front();
  if (z <= -kNormalClip) return quantiles.front();
  if (z >= kNormalClip) return quantiles.back();
  const double p = standard_normal_cdf(z);
  if (p <= references.front()) return quantiles.front();
  if (p >= references.back()) return quantiles.back();
  return interpolate(references, quantiles, p);
}

int CategoryEncoding::encode(std::optional<std::string_view> label) const {
  if (!label) {
    if (has_missing) return missing_index();
    warn("missing category in a column fitted without missing values; using majority category");
    return majority;
  }
  const std::size_t limit = has_missing ? vocabulary.size() - 1 : vocabulary.size();
  for (std::size_t i = 0; i < limit; ++i) {
    if (vocabulary[i] == *label) return static_cast<int>(i);
  }
  warn("unknown category '" + std::string(*label) + "'; using majority category '" +
       vocabulary[static_cast<std::size_t>(majority)] + "'");
  return majority;
}

std::vector<std::size_t> PreprocessState::category_counts() const {
  std::vector<std::size_t> counts;
  counts.reserve(categorical.size());
  for (const auto& c : categorical) counts.push_back(c.size());
  return counts;
}

PreprocessState fit_preprocess(const Table& table) {
  if (table.rows() == 0) throw FitError("cannot fit preprocessing on an empty table");
  const auto& schema = table.schema();
  PreprocessState state;
  state.schema = schema;

  for (std::size_t b = 0; b < schema.num_numerical(); ++b) {
    std::vector<double> column;
    column.reserve(table.rows());
    for (std::size_t r = 0; r < table.rows(); ++r) column.push_back(table.numerical(r, b));
    try {
      state.numerical.push_back(QuantileTransform::fit(std::move(column)));
    } catch (const FitError&) {
      throw FitError("numerical column '" + schema.columns()[schema.numerical_columns()[b]].name +
                     "' has no non-missing values");
    }
  }

  for (std::size_t b = 0; b < schema.num_categorical(); ++b) {
    const auto& labels = table.labels(b);
    std::vector<std::size_t> counts(labels.size(), 0);
    bool any_missing = false;
    for (std::size_t r = 0; r < table.rows(); ++r) {
      const int idx = table.categorical(r, b);
      if (idx == kMissingCategory) {
        any_missing = true;
      } else {
        ++counts[static_cast<std::size_t>(idx)];
      }
    }
    CategoryEncoding enc;
    std::size_t best = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (counts[i] == 0) continue;
      if (enc.vocabulary.empty() || counts[i] > best) {
        best = counts[i];
        enc.majority = static_cast<int>(enc.vocabulary.size());
      }
      enc.vocabulary.push_back(labels[i]);
    }
    if (any_missing) {
      enc.has_missing = true;
      enc.vocabulary.emplace_back();
      if (enc.vocabulary.size() == 1) enc.majority = 0;
    }
    state.categorical.push_back(std::move(enc));
  }
  return state;
}

ProcessedTable apply_preprocess(const Table& table, const PreprocessState& state) {
  const auto& schema = table.schema();
  if (schema != state.schema) throw SchemaError("table schema does not match preprocessing state");
  const std::size_t mn = schema.num_numerical();
  const std::size_t mc = schema.num_categorical();

  ProcessedTable out;
  out.rows = table.rows();
  out.numerical = nn::Tensor(table.rows(), mn);
  out.categorical.resize(table.rows() * mc);
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t b = 0; b < mn; ++b) {
      out.numerical(r, b) = state.numerical[b].forward(table.numerical(r, b));
    }
    for (std::size_t b = 0; b < mc; ++b) {
      out.categorical[r * mc + b] = state.categorical[b].encode(table.label(r, b));
    }
  }
  return out;
}

Table invert_preprocess(const ProcessedTable& processed, const PreprocessState& state) {
  const auto& schema = state.schema;
  const std::size_t mn = schema.num_numerical();
  const std::size_t mc = schema.num_categorical();
  if (processed.numerical.rows() != processed.rows || processed.numerical.cols() != mn ||
      processed.categorical.size() != processed.rows * mc) {
    throw DimensionError("processed table does not match preprocessing state");
  }
  Table out(schema, processed.rows);
  for (std::size_t b = 0; b < mc; ++b) {
    const auto& enc = state.categorical[b];
    const std::size_t real = enc.has_missing ? enc.size() - 1 : enc.size();
    for (std::size_t i = 0; i < real; ++i) out.intern(b, enc.vocabulary[i]);
  }
  for (std::size_t r = 0; r < processed.rows; ++r) {
    for (std::size_t b = 0; b < mn; ++b) {
      out.numerical(r, b) = state.numerical[b].inverse(processed.numerical(r, b));
    }
    for (std::size_t b = 0; b < mc; ++b) {
      const int idx = processed.categorical[r * mc + b];
      const auto& enc = state.categorical[b];
      if (idx < 0 || static_cast<std::size_t>(idx) >= enc.size()) {
        throw DimensionError("category index out of range");
      }
      out.categorical(r, b) = idx == enc.missing_index() ? kMissingCategory : idx;
    }
  }
  return out;
}

nlohmann::json PreprocessState::to_json() const {
  nlohmann::json num = nlohmann::json::array();
  for (const auto& q : numerical) {
    num.push_back({{"fill", q.fill}, {"quantiles", q.quantiles}, {"references", q.references}});
  }
  nlohmann::json cat = nlohmann::json::array();
  for (const auto& c : categorical) {
    cat.push_back(
        {{"vocabulary", c.vocabulary}, {"has_missing", c.has_missing}, {"majority", c.majority}});
  }
  return {{"schema", schema.to_json()}, {"numerical", num}, {"categorical", cat}};
}

PreprocessState PreprocessState::from_json(const nlohmann::json& j) {
  PreprocessState s;
  s.schema = TableSchema::from_json(j.at("schema"));
  for (const auto& q : j.at("numerical")) {
    QuantileTransform qt;
    qt.fill = q.at("fill").get<double>();
    qt.quantiles = q.at("quantiles").get<std::vector<double>>();
    qt.references = q.at("references").get<std::vector<double>>();
    if (qt.quantiles.empty() || qt.quantiles.size() != qt.references.size()) {
      throw SchemaError("malformed quantile grid");
    }
    s.numerical.push_back(std::move(qt));
  }
  for (const auto& c : j.at("categorical")) {
    CategoryEncoding enc;
    enc.vocabulary = c.at("vocabulary").get<std::vector<std::string>>();
    enc.has_missing = c.at("has_missing").get<bool>();
    enc.majority = c.at("majority").get<int>();
    s.categorical.push_back(std::move(enc));
  }
  if (s.numerical.size() != s.schema.num_numerical() ||
      s.categorical.size() != s.schema.num_categorical()) {
    throw SchemaError("preprocessing state does not match its schema");
  }
  return s;
}

}  // namespace tabforge::table
