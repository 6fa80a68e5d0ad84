#include "tabforge/nn/param_store.hpp"

#include <cmath>

#include "tabforge/error.hpp"

namespace tabforge::nn {

std::size_t ParamStore::add(std::string name, Tensor value) {
  if (lookup_.contains(name)) throw StateError("duplicate parameter name: " + name);
  const std::size_t i = values_.size();
  lookup_.emplace(name, i);
  names_.push_back(std::move(name));
  m_.emplace_back(value.rows(), value.cols());
  v_.emplace_back(value.rows(), value.cols());
  values_.push_back(std::move(value));
  return i;
}

bool ParamStore::contains(std::string_view name) const {
  return lookup_.contains(std::string(name));
}

std::size_t ParamStore::index(std::string_view name) const {
  const auto it = lookup_.find(std::string(name));
  if (it == lookup_.end()) throw StateError("unknown parameter: " + std::string(name));
  return it->second;
}

std::size_t ParamStore::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : values_) n += t.size();
  return n;
}

void adam_step(ParamStore& store, const Gradients& grads, const AdamConfig& config) {
  if (grads.size() != store.size()) {
    throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(store.size()) + " parameters");
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& g = grads[i];
    if (g.rows() != store.value(i).rows() || g.cols() != store.value(i).cols()) {
      throw DimensionError("adam_step: gradient shape " + g.shape_string() + " for parameter " +
                           store.name(i) + " of shape " + store.value(i).shape_string());
    }
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + store.name(i));
  }

  const std::uint64_t t = store.step() + 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto p = store.value(i).data();
    auto m = store.first_moment(i).data();
    auto v = store.second_moment(i).data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
  store.set_step(t);
}

}  // namespace tabforge::nn
