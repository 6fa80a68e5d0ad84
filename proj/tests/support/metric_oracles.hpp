#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

namespace tabforge::testing {

using Labels = std::vector<std::string>;

// Direct-summation oracles, written without sorting or hashing.
inline double brute_kst(const std::vector<double>& r, const std::vector<double>& s) {
  std::vector<double> points = r;
  points.insert(points.end(), s.begin(), s.end());
  double worst = 0.0;
  for (double x : points) {
    double fr = 0.0, fs = 0.0;
    for (double v : r) fr += v <= x;
    for (double v : s) fs += v <= x;
    worst = std::max(worst, std::abs(fr / static_cast<double>(r.size()) - fs / static_cast<double>(s.size())));
  }
  return worst;
}

inline double brute_tvd(const Labels& r, const Labels& s) {
  std::set<std::string> omega(r.begin(), r.end());
  omega.insert(s.begin(), s.end());
  double sum = 0.0;
  for (const auto& w : omega) {
    double cr = 0.0, cs = 0.0;
    for (const auto& v : r) cr += v == w;
    for (const auto& v : s) cs += v == w;
    sum += std::abs(cr / static_cast<double>(r.size()) - cs / static_cast<double>(s.size()));
  }
  return sum / 2.0;
}

// rho from pairwise differences: sum_{i<j} dx dy / sqrt(sum dx^2 sum dy^2).
inline double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      sxy += (x[i] - x[j]) * (y[i] - y[j]);
      sxx += (x[i] - x[j]) * (x[i] - x[j]);
      syy += (y[i] - y[j]) * (y[i] - y[j]);
    }
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double brute_contingency(const Labels& ra, const Labels& rb, const Labels& sa, const Labels& sb) {
  std::set<std::string> alpha(ra.begin(), ra.end());
  alpha.insert(sa.begin(), sa.end());
  std::set<std::string> beta(rb.begin(), rb.end());
  beta.insert(sb.begin(), sb.end());
  double sum = 0.0;
  for (const auto& a : alpha) {
    for (const auto& b : beta) {
      double cr = 0.0, cs = 0.0;
      for (std::size_t i = 0; i < ra.size(); ++i) cr += ra[i] == a && rb[i] == b;
      for (std::size_t i = 0; i < sa.size(); ++i) cs += sa[i] == a && sb[i] == b;
      sum += std::abs(cr / static_cast<double>(ra.size()) - cs / static_cast<double>(sa.size()));
    }
  }
  return sum / 2.0;
}

}  // namespace tabforge::testing
