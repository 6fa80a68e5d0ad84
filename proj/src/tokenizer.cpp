#include "tabforge/tokenizer.hpp"

#include <algorithm>
#include <cmath>

#include "tabforge/error.hpp"
#include "tabforge/nn/ops.hpp"

namespace tabforge {

namespace {

std::string token_tag(const TokenLayout& layout, std::size_t token) {
  if (token < layout.num_numerical) return "num" + std::to_string(token);
  if (token < layout.tokens()) return "cat" + std::to_string(token - layout.num_numerical);
  throw DimensionError("token index " + std::to_string(token) + " out of range");
}

nn::Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  nn::Tensor t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

std::size_t token_inputs(const TokenLayout& layout, std::size_t token) {
  return token < layout.num_numerical ? 1 : layout.category_counts[token - layout.num_numerical];
}

void check_row(const TokenLayout& layout, std::size_t numerical, std::size_t categorical) {
  if (numerical != layout.num_numerical || categorical != layout.num_categorical()) {
    throw DimensionError("row has " + std::to_string(numerical) + " numerical and " +
                         std::to_string(categorical) + " categorical values, layout expects " +
                         std::to_string(layout.num_numerical) + " and " +
                         std::to_string(layout.num_categorical()));
  }
}

}  // namespace

std::string tokenizer_weight_name(const TokenLayout& layout, std::size_t token) {
  return "tokenizer." + token_tag(layout, token) + ".w";
}
std::string tokenizer_bias_name(const TokenLayout& layout, std::size_t token) {
  return "tokenizer." + token_tag(layout, token) + ".b";
}
std::string detokenizer_weight_name(const TokenLayout& layout, std::size_t token) {
  return "detokenizer." + token_tag(layout, token) + ".w";
}
std::string detokenizer_bias_name(const TokenLayout& layout, std::size_t token) {
  return "detokenizer." + token_tag(layout, token) + ".b";
}

void init_tokenizer(nn::ParamStore& store, const TokenLayout& layout, Rng& rng) {
  if (layout.d == 0) throw DimensionError("token width d must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(layout.d));
  for (std::size_t m = 0; m < layout.tokens(); ++m) {
    store.add(tokenizer_weight_name(layout, m),
              uniform_tensor(token_inputs(layout, m), layout.d, bound, rng));
    store.add(tokenizer_bias_name(layout, m), nn::Tensor(1, layout.d));
  }
}

void init_detokenizer(nn::ParamStore& store, const TokenLayout& layout, Rng& rng) {
  if (layout.d == 0) throw DimensionError("token width d must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(layout.d));
  for (std::size_t m = 0; m < layout.tokens(); ++m) {
    const std::size_t outputs = token_inputs(layout, m);
    store.add(detokenizer_weight_name(layout, m), uniform_tensor(layout.d, outputs, bound, rng));
    store.add(detokenizer_bias_name(layout, m), nn::Tensor(1, outputs));
  }
}

nn::Tensor one_hot(int index, std::size_t categories) {
  if (index == kUniformCategory && categories > 0) {
    return nn::Tensor(1, categories, 1.0 / static_cast<double>(categories));
  }
  if (index < 0 || static_cast<std::size_t>(index) >= categories) {
    throw DimensionError("category " + std::to_string(index) + " outside [0, " +
                         std::to_string(categories) + ")");
  }
  nn::Tensor t(1, categories);
  t(0, static_cast<std::size_t>(index)) = 1.0;
  return t;
}

nn::Tensor tokenize(const nn::ParamStore& store, const TokenLayout& layout,
                    std::span<const double> numerical, std::span<const nn::Tensor> one_hots) {
  check_row(layout, numerical.size(), one_hots.size());
  nn::Tensor out(layout.tokens(), layout.d);
  for (std::size_t m = 0; m < layout.tokens(); ++m) {
    const auto& w = store.value(tokenizer_weight_name(layout, m));
    const auto& b = store.value(tokenizer_bias_name(layout, m));
    nn::Tensor x;
    if (m < layout.num_numerical) {
      x = nn::Tensor(1, 1, numerical[m]);
    } else {
      x = one_hots[m - layout.num_numerical];
      if (x.rows() != 1 || x.cols() != w.rows()) {
        throw DimensionError("one-hot vector for token " + std::to_string(m) + " has shape " +
                             x.shape_string());
      }
    }
    const auto e = nn::dense_forward(x, w, b);
    std::copy(e.data().begin(), e.data().end(), out.row_span(m).begin());
  }
  return out;
}

nn::Tensor tokenize(const nn::ParamStore& store, const TokenLayout& layout,
                    std::span<const double> numerical, std::span<const int> categories) {
  check_row(layout, numerical.size(), categories.size());
  std::vector<nn::Tensor> hots;
  hots.reserve(categories.size());
  for (std::size_t i = 0; i < categories.size(); ++i) {
    hots.push_back(one_hot(categories[i], layout.category_counts[i]));
  }
  return tokenize(store, layout, numerical, hots);
}

std::vector<int> Detokenized::labels() const {
  std::vector<int> out;
  out.reserve(probabilities.size());
  for (const auto& p : probabilities) {
    out.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
  }
  return out;
}

Detokenized detokenize(const nn::ParamStore& store, const TokenLayout& layout,
                       const nn::Tensor& tokens) {
  if (tokens.rows() != layout.tokens() || tokens.cols() != layout.d) {
    throw DimensionError("token matrix " + tokens.shape_string() + " does not match layout");
  }
  Detokenized out;
  for (std::size_t m = 0; m < layout.tokens(); ++m) {
    const nn::Tensor e = nn::Tensor::row(tokens.row_span(m));
    const auto y = nn::dense_forward(e, store.value(detokenizer_weight_name(layout, m)),
                                     store.value(detokenizer_bias_name(layout, m)));
    if (m < layout.num_numerical) {
      out.numerical.push_back(y(0, 0));
    } else {
      const auto p = nn::softmax_rows(y);
      out.probabilities.emplace_back(p.data().begin(), p.data().end());
    }
  }
  return out;
}

nn::Var tokenize_batch(nn::Tape& tape, const nn::ParamStore& store, const TokenLayout& layout,
                       const nn::Tensor& numerical, std::span<const int> categories) {
  const std::size_t batch = numerical.rows();
  const std::size_t mc = layout.num_categorical();
  if (numerical.cols() != layout.num_numerical || categories.size() != batch * mc) {
    throw DimensionError("batch does not match token layout");
  }
  std::vector<nn::Var> columns;
  columns.reserve(layout.tokens());
  for (std::size_t m = 0; m < layout.tokens(); ++m) {
    nn::Tensor x;
    if (m < layout.num_numerical) {
      x = nn::Tensor(batch, 1);
      for (std::size_t b = 0; b < batch; ++b) x(b, 0) = numerical(b, m);
    } else {
      const std::size_t block = m - layout.num_numerical;
      const std::size_t classes = layout.category_counts[block];
      x = nn::Tensor(batch, classes);
      for (std::size_t b = 0; b < batch; ++b) {
        const int k = categories[b * mc + block];
        if (k == kUniformCategory) {
          for (std::size_t c = 0; c < classes; ++c) x(b, c) = 1.0 / static_cast<double>(classes);
          continue;
        }
        if (k < 0 || static_cast<std::size_t>(k) >= classes) {
          throw DimensionError("category index out of range in batch");
        }
        x(b, static_cast<std::size_t>(k)) = 1.0;
      }
    }
    const auto w = tape.param(store, tokenizer_weight_name(layout, m));
    const auto bias = tape.param(store, tokenizer_bias_name(layout, m));
    columns.push_back(tape.add_bias(tape.matmul(tape.constant(std::move(x)), w), bias));
  }
  return tape.stack_tokens(columns);
}

DetokenizedBatch detokenize_batch(nn::Tape& tape, const nn::ParamStore& store,
                                  const TokenLayout& layout, nn::Var tokens) {
  DetokenizedBatch out;
  for (std::size_t m = 0; m < layout.tokens(); ++m) {
    const auto e = tape.take_token(tokens, m, layout.tokens());
    const auto w = tape.param(store, detokenizer_weight_name(layout, m));
    const auto b = tape.param(store, detokenizer_bias_name(layout, m));
    const auto y = tape.add_bias(tape.matmul(e, w), b);
    (m < layout.num_numerical ? out.numerical : out.logits).push_back(y);
  }
  return out;
}

nn::Tensor flatten_latent(const nn::Tensor& tokens) {
  return nn::Tensor(1, tokens.size(), std::vector<double>(tokens.data().begin(), tokens.data().end()));
}

nn::Tensor unflatten_latent(const nn::Tensor& flat, std::size_t d) {
  if (d == 0 || flat.rows() != 1 || flat.cols() % d != 0) {
    throw DimensionError("cannot unflatten " + flat.shape_string() + " into rows of width " +
                         std::to_string(d));
  }
  return nn::Tensor(flat.cols() / d, d,
                    std::vector<double>(flat.data().begin(), flat.data().end()));
}

}  // namespace tabforge
