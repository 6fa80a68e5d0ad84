#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "tabforge/nn/param_store.hpp"
#include "tabforge/nn/tensor.hpp"

namespace tabforge::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const noexcept { return id != kInvalid; }
};

/// Records forward operations in creation order (which is a topological
/// order) and replays them in reverse to accumulate gradients.
///
/// A tape is single-use: record, call backward() once, read gradients.
/// Parameters are read from the ParamStore at record time; the store must
/// outlive the tape and must not be mutated while the tape is alive.
class Tape {
 public:
  Var constant(Tensor value);
  Var param(const ParamStore& store, std::size_t index);
  Var param(const ParamStore& store, std::string_view name);

  Var matmul(Var a, Var b);
  Var add_bias(Var x, Var bias);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var relu(Var a);
  Var silu(Var a);
  Var exp(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, double eps);

  // Self-attention over consecutive row groups of size `group`.
  Var attention(Var q, Var k, Var v, std::size_t group, double scale);

  // Interleaves per-column B x d blocks into a (B*M) x d token stack where
  // row b*M + m holds column m of sample b.
  Var stack_tokens(std::span<const Var> columns);
  // Inverse selection: rows b*count + index for every sample b.
  Var take_token(Var tokens, std::size_t index, std::size_t count);
  // Reshape (B*M) x d into B x (M*d) (and back); storage is unchanged.
  Var reshape(Var a, std::size_t rows, std::size_t cols);

  // Scalar losses (1 x 1).
  Var mse(Var prediction, const Tensor& target);
  Var softmax_cross_entropy(Var logits, std::span<const int> labels);
  Var kl_standard_normal(Var mu, Var log_sigma);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var loss, double seed = 1.0);

  // Gradients for every parameter of `store`; zeros for parameters the
  // forward pass never touched.
  Gradients parameter_gradients(const ParamStore& store) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    std::function<void(Tape&)> backward;
    std::size_t param_index = Var::kInvalid;
  };

  Var push(Tensor value, std::function<void(Tape&)> backward = {});
  Node& node(Var v);
  const Node& node(Var v) const;
  Tensor& grad_buffer(Var v);

  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, Var> param_vars_;
  const ParamStore* store_ = nullptr;
  bool backward_done_ = false;
};

}  // namespace tabforge::nn
