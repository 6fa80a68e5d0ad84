#pragma once

#include <span>

#include "tabforge/nn/tensor.hpp"

// Stateless forward kernels. The tape records these and adds the matching
// reverse-mode rules; they are also usable directly for inference.
namespace tabforge::nn {

inline constexpr double kLayerNormEps = 1e-5;

Tensor matmul(const Tensor& a, const Tensor& b);
// a^T * b
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// c += a^T * b and c += a * b^T.
void matmul_tn_add(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_nt_add(const Tensor& a, const Tensor& b, Tensor& c);

// y = xW + b, b broadcast over rows.
Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Per-row normalization with population variance, then gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

// Row-wise softmax.
Tensor softmax_rows(const Tensor& logits);

// Single-head attention probabilities softmax(QK^T / sqrt(d)) for one M x d token matrix.
Tensor attention_weights(const Tensor& tokens, const Tensor& wq, const Tensor& wk);

// softmax(QK^T / sqrt(d)) V with Q = H Wq, K = H Wk, V = H Wv.
Tensor self_attention(const Tensor& tokens, const Tensor& wq, const Tensor& wk,
                      const Tensor& wv);

// Attention over a stack of G groups of `group` consecutive rows each.
// Returns the output and writes the per-group probability blocks
// (G * group rows x group cols) into `probs` when non-null.
Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t group,
                         double scale, Tensor* probs = nullptr);

double silu(double x);
// Vectorized SiLU; also writes sigmoid(x) into `sig` for the backward pass.
void silu_forward(std::span<const double> in, std::span<double> out, std::span<double> sig);
double sigmoid(double x);

}  // namespace tabforge::nn
