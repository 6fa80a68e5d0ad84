#include "tabforge/nn/tape.hpp"

#include <algorithm>
#include <cmath>

#include "tabforge/error.hpp"
#include "tabforge/nn/ops.hpp"

namespace tabforge::nn {

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

void accumulate(Tensor& into, const Tensor& g) {
  auto dst = into.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var Tape::push(Tensor value, std::function<void(Tape&)> backward) {
  if (backward_done_) throw StateError("tape already consumed by backward()");
  Node n;
  n.value = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) throw StateError("variable does not belong to this tape");
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw StateError("variable does not belong to this tape");
  return nodes_[v.id];
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.has_grad) throw StateError("no gradient recorded for variable");
  return n.grad;
}

Var Tape::constant(Tensor value) { return push(std::move(value)); }

Var Tape::param(const ParamStore& store, std::size_t index) {
  if (store_ && store_ != &store) throw StateError("tape already bound to another ParamStore");
  store_ = &store;
  if (auto it = param_vars_.find(index); it != param_vars_.end()) return it->second;
  Var v = push(store.value(index));
  nodes_[v.id].param_index = index;
  param_vars_.emplace(index, v);
  return v;
}

Var Tape::param(const ParamStore& store, std::string_view name) {
  return param(store, store.index(name));
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = nn::matmul(value(a), value(b));
  return push(std::move(out), [a, b, self = nodes_.size()](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    Node& na = t.node(a);
    if (na.has_grad) {
      matmul_nt_add(g, t.value(b), na.grad);
    } else {
      na.grad = matmul_nt(g, t.value(b));
      na.has_grad = true;
    }
    Node& nb = t.node(b);
    if (nb.has_grad) {
      matmul_tn_add(t.value(a), g, nb.grad);
    } else {
      nb.grad = matmul_tn(t.value(a), g);
      nb.has_grad = true;
    }
  });
}

Var Tape::add_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_bias: bias " + bv.shape_string() + " for input " +
                         xv.shape_string());
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  }
  return push(std::move(out), [x, bias, self = nodes_.size()](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    accumulate(t.grad_buffer(x), g);
    Tensor& gb = t.grad_buffer(bias);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
    }
  });
}

Var Tape::add(Var a, Var b) {
  same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  accumulate(out, value(b));
  return push(std::move(out), [a, b, self = nodes_.size()](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    accumulate(t.grad_buffer(a), g);
    accumulate(t.grad_buffer(b), g);
  });
}

Var Tape::sub(Var a, Var b) {
  same_shape(value(a), value(b), "sub");
  Tensor out = value(a);
  auto o = out.data();
  auto bv = value(b).data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return push(std::move(out), [a, b, self = nodes_.size()](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    accumulate(t.grad_buffer(a), g);
    auto gb = t.grad_buffer(b).data();
    auto gs = g.data();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gs[i];
  });
}

Var Tape::mul(Var a, Var b) {
  same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  auto o = out.data();
  auto bv = value(b).data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return push(std::move(out), [a, b, self = nodes_.size()](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    auto av = t.value(a).data();
    auto bv2 = t.value(b).data();
    auto ga = t.grad_buffer(a).data();
    auto gb = t.grad_buffer(b).data();
    auto gs = g.data();
    for (std::size_t i = 0; i < gs.size(); ++i) {
      ga[i] += gs[i] * bv2[i];
      gb[i] += gs[i] * av[i];
    }
  });
}

Var Tape::scale(Var a, double factor) {
  Tensor out = value(a);
  for (double& v : out.data()) v *= factor;
  return push(std::move(out), [a, factor, self = nodes_.size()](Tape& t) {
    auto gs = t.nodes_[self].grad.data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += factor * gs[i];
  });
}

Var Tape::relu(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), [a, self = nodes_.size()](Tape& t) {
    auto gs = t.nodes_[self].grad.data();
    auto in = t.value(a).data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < gs.size(); ++i) {
      if (in[i] > 0.0) ga[i] += gs[i];
    }
  });
}

Var Tape::silu(Var a) {
  const Tensor& in = value(a);
  Tensor out(in.rows(), in.cols());
  std::vector<double> sig(in.size());
  silu_forward(in.data(), out.data(), sig);
  return push(std::move(out), [a, sig = std::move(sig), self = nodes_.size()](Tape& t) {
    auto gs = t.nodes_[self].grad.data();
    auto in = t.value(a).data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < gs.size(); ++i) {
      ga[i] += gs[i] * sig[i] * (1.0 + in[i] * (1.0 - sig[i]));
    }
  });
}

Var Tape::exp(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = std::exp(v);
  return push(std::move(out), [a, self = nodes_.size()](Tape& t) {
    auto gs = t.nodes_[self].grad.data();
    auto ov = t.nodes_[self].value.data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += gs[i] * ov[i];
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = value(x);
  const Tensor out = nn::layer_norm(xv, value(gamma), value(beta), eps);
  // Saved per-row statistics for the backward pass.
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  Tensor xhat(rows, cols);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = xv.row_span(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(cols);
    const double denom = var + eps;
    inv_std[r] = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    for (std::size_t c = 0; c < cols; ++c) xhat(r, c) = (in[c] - mean) * inv_std[r];
  }
  return push(Tensor(out), [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std),
                            self = nodes_.size()](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& gam = t.value(gamma);
    Tensor& gx = t.grad_buffer(x);
    Tensor& gg = t.grad_buffer(gamma);
    Tensor& gbeta = t.grad_buffer(beta);
    const std::size_t cols = g.cols();
    const double n = static_cast<double>(cols);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double sum_dxhat = 0.0;
      double sum_dxhat_xhat = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double dxhat = g(r, c) * gam[c];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat(r, c);
        gg[c] += g(r, c) * xhat(r, c);
        gbeta[c] += g(r, c);
      }
      for (std::size_t c = 0; c < cols; ++c) {
        const double dxhat = g(r, c) * gam[c];
        gx(r, c) += inv_std[r] * (dxhat - sum_dxhat / n - xhat(r, c) * sum_dxhat_xhat / n);
      }
    }
  });
}

Var Tape::attention(Var q, Var k, Var v, std::size_t group, double scale) {
  Tensor probs;
  Tensor out = grouped_attention(value(q), value(k), value(v), group, scale, &probs);
  return push(std::move(out), [q, k, v, group, scale, probs = std::move(probs),
                               self = nodes_.size()](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& qv = t.value(q);
    const Tensor& kv = t.value(k);
    const Tensor& vv = t.value(v);
    Tensor& gq = t.grad_buffer(q);
    Tensor& gk = t.grad_buffer(k);
    Tensor& gv = t.grad_buffer(v);
    const std::size_t groups = qv.rows() / group;
    const std::size_t dk = qv.cols();
    const std::size_t dv = vv.cols();
    std::vector<double> dp(group);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = gi * group;
      for (std::size_t i = 0; i < group; ++i) {
        // dP_ij = dO_i . V_j ; dS = P * (dP - sum_j P_ij dP_ij)
        double weighted = 0.0;
        for (std::size_t j = 0; j < group; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dv; ++c) s += g(base + i, c) * vv(base + j, c);
          dp[j] = s;
          weighted += probs(base + i, j) * s;
        }
        for (std::size_t j = 0; j < group; ++j) {
          const double p = probs(base + i, j);
          for (std::size_t c = 0; c < dv; ++c) gv(base + j, c) += p * g(base + i, c);
          const double ds = p * (dp[j] - weighted) * scale;
          for (std::size_t c = 0; c < dk; ++c) {
            gq(base + i, c) += ds * kv(base + j, c);
            gk(base + j, c) += ds * qv(base + i, c);
          }
        }
      }
    }
  });
}

Var Tape::stack_tokens(std::span<const Var> columns) {
  if (columns.empty()) throw DimensionError("stack_tokens: no columns");
  const std::size_t batch = value(columns[0]).rows();
  const std::size_t width = value(columns[0]).cols();
  const std::size_t count = columns.size();
  for (Var c : columns) {
    if (value(c).rows() != batch || value(c).cols() != width) {
      throw DimensionError("stack_tokens: column block " + value(c).shape_string() +
                           " does not match " + value(columns[0]).shape_string());
    }
  }
  Tensor out(batch * count, width);
  for (std::size_t m = 0; m < count; ++m) {
    const Tensor& block = value(columns[m]);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(block.row_span(b).begin(), width, out.row_span(b * count + m).begin());
    }
  }
  std::vector<Var> cols(columns.begin(), columns.end());
  return push(std::move(out), [cols = std::move(cols), self = nodes_.size()](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const std::size_t count = cols.size();
    for (std::size_t m = 0; m < count; ++m) {
      Tensor& gc = t.grad_buffer(cols[m]);
      for (std::size_t b = 0; b < gc.rows(); ++b) {
        auto src = g.row_span(b * count + m);
        auto dst = gc.row_span(b);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
      }
    }
  });
}

Var Tape::take_token(Var tokens, std::size_t index, std::size_t count) {
  const Tensor& tv = value(tokens);
  if (count == 0 || index >= count || tv.rows() % count != 0) {
    throw DimensionError("take_token: cannot take token " + std::to_string(index) + " of " +
                         std::to_string(count) + " from " + tv.shape_string());
  }
  const std::size_t batch = tv.rows() / count;
  Tensor out(batch, tv.cols());
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(tv.row_span(b * count + index).begin(), tv.cols(), out.row_span(b).begin());
  }
  return push(std::move(out), [tokens, index, count, self = nodes_.size()](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    Tensor& gt = t.grad_buffer(tokens);
    for (std::size_t b = 0; b < g.rows(); ++b) {
      auto src = g.row_span(b);
      auto dst = gt.row_span(b * count + index);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  });
}

Var Tape::reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& av = value(a);
  if (rows * cols != av.size()) {
    throw DimensionError("reshape: " + av.shape_string() + " to " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
  Tensor out(rows, cols, std::vector<double>(av.data().begin(), av.data().end()));
  return push(std::move(out), [a, self = nodes_.size()](Tape& t) {
    auto gs = t.nodes_[self].grad.data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < gs.size(); ++i) ga[i] += gs[i];
  });
}

Var Tape::mse(Var prediction, const Tensor& target) {
  const Tensor& pv = value(prediction);
  same_shape(pv, target, "mse");
  if (pv.empty()) throw DimensionError("mse: empty input");
  double total = 0.0;
  auto p = pv.data();
  auto y = target.data();
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - y[i]) * (p[i] - y[i]);
  const double n = static_cast<double>(p.size());
  return push(Tensor(1, 1, total / n), [prediction, target, n, self = nodes_.size()](Tape& t) {
    const double g = t.nodes_[self].grad[0];
    auto p = t.value(prediction).data();
    auto y = target.data();
    auto gp = t.grad_buffer(prediction).data();
    for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g * 2.0 * (p[i] - y[i]) / n;
  });
}

Var Tape::softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = value(logits);
  if (labels.size() != lv.rows() || lv.rows() == 0) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + lv.shape_string());
  }
  Tensor probs = softmax_rows(lv);
  double total = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= lv.cols()) {
      throw DimensionError("softmax_cross_entropy: label out of range");
    }
    // log-sum-exp form; exact where the probability would underflow.
    auto row = lv.row_span(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - peak);
    total += peak + std::log(s) - row[static_cast<std::size_t>(y)];
  }
  const double n = static_cast<double>(lv.rows());
  std::vector<int> ys(labels.begin(), labels.end());
  return push(Tensor(1, 1, total / n), [logits, ys = std::move(ys), probs = std::move(probs), n,
                                        self = nodes_.size()](Tape& t) {
    const double g = t.nodes_[self].grad[0];
    Tensor& gl = t.grad_buffer(logits);
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      for (std::size_t c = 0; c < probs.cols(); ++c) {
        const double onehot = static_cast<int>(c) == ys[r] ? 1.0 : 0.0;
        gl(r, c) += g * (probs(r, c) - onehot) / n;
      }
    }
  });
}

Var Tape::kl_standard_normal(Var mu, Var log_sigma) {
  const Tensor& m = value(mu);
  const Tensor& ls = value(log_sigma);
  same_shape(m, ls, "kl_standard_normal");
  if (m.empty()) throw DimensionError("kl_standard_normal: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    total += 0.5 * (m[i] * m[i] + std::exp(2.0 * ls[i]) - 2.0 * ls[i] - 1.0);
  }
  const double n = static_cast<double>(m.size());
  return push(Tensor(1, 1, total / n), [mu, log_sigma, n, self = nodes_.size()](Tape& t) {
    const double g = t.nodes_[self].grad[0];
    auto m = t.value(mu).data();
    auto ls = t.value(log_sigma).data();
    auto gm = t.grad_buffer(mu).data();
    auto gl = t.grad_buffer(log_sigma).data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      gm[i] += g * m[i] / n;
      gl[i] += g * (std::exp(2.0 * ls[i]) - 1.0) / n;
    }
  });
}

void Tape::backward(Var loss, double seed) {
  if (nodes_.empty() || !loss.valid()) throw StateError("backward called before any forward pass");
  if (backward_done_) throw StateError("backward already called on this tape");
  const Tensor& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError("backward: loss must be a scalar, got " + lv.shape_string());
  }
  grad_buffer(loss)[0] += seed;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this);
  }
  backward_done_ = true;
}

Gradients Tape::parameter_gradients(const ParamStore& store) const {
  if (store_ && store_ != &store) throw StateError("tape was recorded against another ParamStore");
  Gradients grads;
  grads.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    grads.emplace_back(store.value(i).rows(), store.value(i).cols());
  }
  for (const auto& [index, var] : param_vars_) {
    const Node& n = nodes_[var.id];
    if (n.has_grad) grads[index] = n.grad;
  }
  return grads;
}

}  // namespace tabforge::nn
