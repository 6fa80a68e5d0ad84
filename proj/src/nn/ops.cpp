#include "tabforge/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "tabforge/error.hpp"

namespace tabforge::nn {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap view(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

void require(bool ok, const char* op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                         b.shape_string());
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  Tensor c(a.rows(), b.cols());
  if (c.empty()) return c;
  view(c).noalias() = view(a) * view(b);
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  Tensor c(a.cols(), b.cols());
  if (c.empty()) return c;
  view(c).noalias() = view(a).transpose() * view(b);
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  Tensor c(a.rows(), b.rows());
  if (c.empty()) return c;
  view(c).noalias() = view(a) * view(b).transpose();
  return c;
}

void matmul_tn_add(const Tensor& a, const Tensor& b, Tensor& c) {
  require(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols(), "matmul_tn_add",
          a, b);
  if (c.empty() || a.rows() == 0) return;
  view(c).noalias() += view(a).transpose() * view(b);
}

void matmul_nt_add(const Tensor& a, const Tensor& b, Tensor& c) {
  require(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows(), "matmul_nt_add",
          a, b);
  if (c.empty() || a.cols() == 0) return;
  view(c).noalias() += view(a) * view(b).transpose();
}

void silu_forward(std::span<const double> in, std::span<double> out, std::span<double> sig) {
  // Eigen peels a scalar head up to the destination's alignment, and the scalar
  // exp differs from the packet exp in the last bit. Working through a fixed,
  // aligned block keeps results independent of where the tensor lives.
  constexpr std::size_t kBlock = 64;
  Eigen::Array<double, kBlock, 1> x;
  Eigen::Array<double, kBlock, 1> s;
  for (std::size_t start = 0; start < in.size(); start += kBlock) {
    const std::size_t len = std::min(kBlock, in.size() - start);
    x.setZero();
    std::copy_n(in.data() + start, len, x.data());
    s = 1.0 / (1.0 + (-x).exp());
    for (std::size_t i = 0; i < len; ++i) {
      sig[start + i] = s[static_cast<Eigen::Index>(i)];
      out[start + i] = x[static_cast<Eigen::Index>(i)] * s[static_cast<Eigen::Index>(i)];
    }
  }
}

Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.cols() == weight.rows(), "dense_forward", x, weight);
  require(bias.rows() == 1 && bias.cols() == weight.cols(), "dense_forward bias", bias, weight);
  Tensor y = matmul(x, weight);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += bias[c];
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm gamma", x, gamma);
  require(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm beta", x, beta);
  if (!(eps >= 0.0)) throw DomainError("layer_norm: eps must be non-negative");
  Tensor y(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row_span(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= n;
    const double denom = var + eps;
    const double inv = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      y(r, c) = gamma[c] * (in[c] - mean) * inv + beta[c];
    }
  }
  return y;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row_span(r);
    auto out = p.row_span(r);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - peak);
      total += out[c];
    }
    for (double& v : out) v /= total;
  }
  return p;
}

Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t group,
                         double scale, Tensor* probs) {
  require(q.rows() == k.rows() && q.cols() == k.cols(), "attention q/k", q, k);
  require(v.rows() == q.rows(), "attention v", q, v);
  if (group == 0 || q.rows() % group != 0) {
    throw DimensionError("attention: row count " + std::to_string(q.rows()) +
                         " is not a multiple of group size " + std::to_string(group));
  }
  const std::size_t groups = q.rows() / group;
  Tensor out(q.rows(), v.cols());
  if (probs) *probs = Tensor(q.rows(), group);
  Tensor scores(group, group);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * group;
    for (std::size_t i = 0; i < group; ++i) {
      auto qi = q.row_span(base + i);
      double peak = -INFINITY;
      for (std::size_t j = 0; j < group; ++j) {
        auto kj = k.row_span(base + j);
        double s = 0.0;
        for (std::size_t c = 0; c < qi.size(); ++c) s += qi[c] * kj[c];
        scores(i, j) = s * scale;
        peak = std::max(peak, scores(i, j));
      }
      double total = 0.0;
      for (std::size_t j = 0; j < group; ++j) {
        scores(i, j) = std::exp(scores(i, j) - peak);
        total += scores(i, j);
      }
      for (std::size_t j = 0; j < group; ++j) scores(i, j) /= total;
      auto oi = out.row_span(base + i);
      for (std::size_t j = 0; j < group; ++j) {
        const double w = scores(i, j);
        auto vj = v.row_span(base + j);
        for (std::size_t c = 0; c < oi.size(); ++c) oi[c] += w * vj[c];
      }
      if (probs) {
        for (std::size_t j = 0; j < group; ++j) (*probs)(base + i, j) = scores(i, j);
      }
    }
  }
  return out;
}

Tensor attention_weights(const Tensor& tokens, const Tensor& wq, const Tensor& wk) {
  require(tokens.cols() == wq.rows() && wq.rows() == wq.cols(), "attention Wq", tokens, wq);
  require(wk.rows() == wq.rows() && wk.cols() == wq.cols(), "attention Wk", wq, wk);
  Tensor probs;
  const Tensor q = matmul(tokens, wq);
  grouped_attention(q, matmul(tokens, wk), q, tokens.rows(),
                    1.0 / std::sqrt(static_cast<double>(tokens.cols())), &probs);
  return probs;
}

Tensor self_attention(const Tensor& tokens, const Tensor& wq, const Tensor& wk,
                      const Tensor& wv) {
  for (const Tensor* w : {&wq, &wk, &wv}) {
    require(tokens.cols() == w->rows() && w->rows() == w->cols(), "self_attention", tokens, *w);
  }
  return grouped_attention(matmul(tokens, wq), matmul(tokens, wk), matmul(tokens, wv),
                           tokens.rows(), 1.0 / std::sqrt(static_cast<double>(tokens.cols())));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

}  // namespace tabforge::nn
