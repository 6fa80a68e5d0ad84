#pragma once

// Central finite-difference oracle for tape gradients. Independent of the
// reverse-mode rules: it only ever evaluates forward passes.

#include <algorithm>
#include <cmath>
#include <functional>

#include "tabforge/nn/param_store.hpp"
#include "tabforge/nn/tape.hpp"

namespace tabforge::testing {

using LossBuilder = std::function<nn::Var(nn::Tape&, const nn::ParamStore&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
};

inline double forward_loss(const LossBuilder& build, const nn::ParamStore& store) {
  nn::Tape tape;
  const nn::Var loss = build(tape, store);
  return tape.value(loss)[0];
}

// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps entries whose
// true gradient is ~0 from dividing rounding noise by zero.
inline GradCheckResult check_gradients(const LossBuilder& build, nn::ParamStore store,
                                       double step = 1e-5, double floor = 1e-5) {
  nn::Tape tape;
  const nn::Var loss = build(tape, store);
  tape.backward(loss);
  const nn::Gradients analytic = tape.parameter_gradients(store);

  GradCheckResult result;
  for (std::size_t p = 0; p < store.size(); ++p) {
    for (std::size_t i = 0; i < store.value(p).size(); ++i) {
      const double saved = store.value(p)[i];
      store.value(p)[i] = saved + step;
      const double up = forward_loss(build, store);
      store.value(p)[i] = saved - step;
      const double down = forward_loss(build, store);
      store.value(p)[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[p][i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = store.name(p) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace tabforge::testing
