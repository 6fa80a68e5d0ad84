#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tabforge/common.hpp"
#include "tabforge/nn/param_store.hpp"
#include "tabforge/nn/tape.hpp"
#include "tabforge/nn/tensor.hpp"

namespace tabforge {

/// Shape of the token matrix: M_num numerical tokens followed by one token per
/// categorical column (with C_i categories each), every token of width d.
struct TokenLayout {
  std::size_t num_numerical = 0;
  std::vector<std::size_t> category_counts;
  std::size_t d = 4;

  std::size_t num_categorical() const noexcept { return category_counts.size(); }
  std::size_t tokens() const noexcept { return num_numerical + category_counts.size(); }
  std::size_t latent_width() const noexcept { return tokens() * d; }
  bool operator==(const TokenLayout&) const = default;
};

// Parameter names in the store.
std::string tokenizer_weight_name(const TokenLayout& layout, std::size_t token);
std::string tokenizer_bias_name(const TokenLayout& layout, std::size_t token);
std::string detokenizer_weight_name(const TokenLayout& layout, std::size_t token);
std::string detokenizer_bias_name(const TokenLayout& layout, std::size_t token);

// Weights uniform(-1/sqrt(d), 1/sqrt(d)), biases zero.
void init_tokenizer(nn::ParamStore& store, const TokenLayout& layout, Rng& rng);
void init_detokenizer(nn::ParamStore& store, const TokenLayout& layout, Rng& rng);

// Placeholder index for a categorical cell whose value is unknown; it
// tokenizes as the uniform vector [1/C, ..., 1/C] instead of a one-hot row.
inline constexpr int kUniformCategory = -1;

nn::Tensor one_hot(int index, std::size_t categories);

// e_i = x_i w_i + b_i (numerical), e_i = onehot_i W_i + b_i (categorical); M x d.
nn::Tensor tokenize(const nn::ParamStore& store, const TokenLayout& layout,
                    std::span<const double> numerical, std::span<const nn::Tensor> one_hots);
nn::Tensor tokenize(const nn::ParamStore& store, const TokenLayout& layout,
                    std::span<const double> numerical, std::span<const int> categories);

struct Detokenized {
  std::vector<double> numerical;
  std::vector<std::vector<double>> probabilities;  // one softmax vector per categorical column

  std::vector<int> labels() const;  // argmax, lowest index on ties
};

Detokenized detokenize(const nn::ParamStore& store, const TokenLayout& layout,
                       const nn::Tensor& tokens);

// Batched, differentiable versions. `numerical` is B x M_num and
// `categories` is B x M_cat row-major; the result is a (B*M) x d token stack.
nn::Var tokenize_batch(nn::Tape& tape, const nn::ParamStore& store, const TokenLayout& layout,
                       const nn::Tensor& numerical, std::span<const int> categories);

struct DetokenizedBatch {
  std::vector<nn::Var> numerical;  // B x 1 per numerical column
  std::vector<nn::Var> logits;     // B x C_i per categorical column
};

DetokenizedBatch detokenize_batch(nn::Tape& tape, const nn::ParamStore& store,
                                  const TokenLayout& layout, nn::Var tokens);

// Row-major M x d <-> 1 x (M*d).
nn::Tensor flatten_latent(const nn::Tensor& tokens);
nn::Tensor unflatten_latent(const nn::Tensor& flat, std::size_t d);

}  // namespace tabforge
