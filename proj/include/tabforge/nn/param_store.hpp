#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tabforge/nn/tensor.hpp"

namespace tabforge::nn {

/// Named parameters plus their Adam moment buffers. Insertion order is the
/// canonical order for gradients and for serialization.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const noexcept { return values_.size(); }
  bool contains(std::string_view name) const;
  std::size_t index(std::string_view name) const;
  const std::string& name(std::size_t i) const { return names_.at(i); }

  Tensor& value(std::size_t i) { return values_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }
  Tensor& value(std::string_view name) { return values_[index(name)]; }
  const Tensor& value(std::string_view name) const { return values_[index(name)]; }

  Tensor& first_moment(std::size_t i) { return m_.at(i); }
  Tensor& second_moment(std::size_t i) { return v_.at(i); }
  const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t s) noexcept { step_ = s; }

  std::size_t parameter_count() const noexcept;

  bool operator==(const ParamStore& other) const {
    return names_ == other.names_ && values_ == other.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::unordered_map<std::string, std::size_t> lookup_;
  std::uint64_t step_ = 0;
};

/// Gradients aligned with ParamStore indices.
using Gradients = std::vector<Tensor>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Throws NumericError naming the first parameter whose
// gradient holds a non-finite value; the store is left untouched in that case.
void adam_step(ParamStore& store, const Gradients& grads, const AdamConfig& config);

}  // namespace tabforge::nn
