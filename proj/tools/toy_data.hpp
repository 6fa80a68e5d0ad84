#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "tabforge/common.hpp"
#include "tabforge/table/table.hpp"

namespace tabforge::toy {

// Two numerical columns from a two-component correlated Gaussian mixture and
// a categorical target that follows the sign of x1 except for 10% flips.
inline table::TableSchema mixture_schema() {
  return table::TableSchema({{"x1", table::ColumnKind::Numerical, false},
                             {"x2", table::ColumnKind::Numerical, false},
                             {"sign", table::ColumnKind::Categorical, true}});
}

struct Component {
  double weight, mean1, mean2, sd1, sd2, rho;
};

inline constexpr Component kComponents[2] = {{0.45, -2.0, -1.0, 1.0, 1.0, 0.6},
                                             {0.55, 2.0, 1.5, 1.2, 0.8, -0.5}};
inline constexpr double kFlip = 0.1;

inline table::Table mixture_table(std::size_t rows, std::uint64_t seed) {
  table::Table t(mixture_schema());
  const int pos = t.intern(0, "pos");
  const int neg = t.intern(0, "neg");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& c = u(rng) < kComponents[0].weight ? kComponents[0] : kComponents[1];
    const double a = standard_normal(rng);
    const double b = standard_normal(rng);
    const double x1 = c.mean1 + c.sd1 * a;
    const double x2 = c.mean2 + c.sd2 * (c.rho * a + std::sqrt(1.0 - c.rho * c.rho) * b);
    const bool flip = u(rng) < kFlip;
    t.append_row();
    t.numerical(r, 0) = x1;
    t.numerical(r, 1) = x2;
    t.categorical(r, 0) = ((x1 > 0.0) != flip) ? pos : neg;
  }
  return t;
}

// Bivariate standard normal with correlation rho; E[x2 | x1] = rho x1.
inline table::TableSchema bivariate_schema() {
  return table::TableSchema({{"x1", table::ColumnKind::Numerical, false},
                             {"x2", table::ColumnKind::Numerical, false}});
}

inline table::Table bivariate_table(std::size_t rows, double rho, std::uint64_t seed) {
  table::Table t(bivariate_schema());
  Rng rng(seed);
  for (std::size_t r = 0; r < rows; ++r) {
    const double a = standard_normal(rng);
    const double b = standard_normal(rng);
    t.append_row();
    t.numerical(r, 0) = a;
    t.numerical(r, 1) = rho * a + std::sqrt(1.0 - rho * rho) * b;
  }
  return t;
}

}  // namespace tabforge::toy
