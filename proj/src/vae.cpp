#include "tabforge/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "tabforge/error.hpp"
#include "tabforge/nn/ops.hpp"
#include "tabforge/table/csv.hpp"

namespace tabforge {

namespace {

constexpr std::size_t kInferenceChunk = 256;

const std::string kEncoderMu = "encoder_mu";
const std::string kEncoderLogSigma = "encoder_logsigma";
const std::string kDecoder = "decoder";

std::string layer_name(const std::string& prefix, std::size_t layer, const char* leaf) {
  return prefix + ".layer" + std::to_string(layer) + "." + leaf;
}

nn::Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  nn::Tensor t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void require_finite(const nn::Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + " produced a non-finite value");
}

// The given rows of the processed table as a batch.
void gather_batch(const table::ProcessedTable& data, std::span<const std::size_t> rows,
                  std::size_t num_categorical, nn::Tensor& numerical, std::vector<int>& categories) {
  const std::size_t mn = data.numerical.cols();
  numerical = nn::Tensor(rows.size(), mn);
  categories.assign(rows.size() * num_categorical, 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    for (std::size_t b = 0; b < mn; ++b) numerical(i, b) = data.numerical(r, b);
    for (std::size_t b = 0; b < num_categorical; ++b) {
      categories[i * num_categorical + b] = data.categorical[r * num_categorical + b];
    }
  }
}

void check_data(const table::ProcessedTable& data, const TokenLayout& layout) {
  if (data.numerical.rows() != data.rows || data.numerical.cols() != layout.num_numerical ||
      data.categorical.size() != data.rows * layout.num_categorical()) {
    throw DimensionError("processed table does not match the token layout");
  }
}

}  // namespace

void init_transformer_stack(nn::ParamStore& store, const std::string& prefix, std::size_t layers,
                            std::size_t d, std::size_t hidden, Rng& rng) {
  const double bd = 1.0 / std::sqrt(static_cast<double>(d));
  const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t l = 0; l < layers; ++l) {
    store.add(layer_name(prefix, l, "wq"), uniform_tensor(d, d, bd, rng));
    store.add(layer_name(prefix, l, "wk"), uniform_tensor(d, d, bd, rng));
    store.add(layer_name(prefix, l, "wv"), uniform_tensor(d, d, bd, rng));
    store.add(layer_name(prefix, l, "ln1.gamma"), nn::Tensor(1, d, 1.0));
    store.add(layer_name(prefix, l, "ln1.beta"), nn::Tensor(1, d));
    store.add(layer_name(prefix, l, "ff1.w"), uniform_tensor(d, hidden, bd, rng));
    store.add(layer_name(prefix, l, "ff1.b"), nn::Tensor(1, hidden));
    store.add(layer_name(prefix, l, "ff2.w"), uniform_tensor(hidden, d, bh, rng));
    store.add(layer_name(prefix, l, "ff2.b"), nn::Tensor(1, d));
    store.add(layer_name(prefix, l, "ln2.gamma"), nn::Tensor(1, d, 1.0));
    store.add(layer_name(prefix, l, "ln2.beta"), nn::Tensor(1, d));
  }
}

nn::Var transformer_stack(nn::Tape& tape, const nn::ParamStore& store, const std::string& prefix,
                          std::size_t layers, nn::Var tokens, std::size_t group) {
  const std::size_t d = tape.value(tokens).cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  nn::Var h = tokens;
  const auto p = [&](std::size_t l, const char* leaf) {
    return tape.param(store, layer_name(prefix, l, leaf));
  };
  for (std::size_t l = 0; l < layers; ++l) {
    const auto q = tape.matmul(h, p(l, "wq"));
    const auto k = tape.matmul(h, p(l, "wk"));
    const auto v = tape.matmul(h, p(l, "wv"));
    const auto attn = tape.attention(q, k, v, group, scale);
    const auto h1 = tape.layer_norm(tape.add(h, attn), p(l, "ln1.gamma"), p(l, "ln1.beta"),
                                    nn::kLayerNormEps);
    const auto inner = tape.relu(tape.add_bias(tape.matmul(h1, p(l, "ff1.w")), p(l, "ff1.b")));
    const auto ffn = tape.add_bias(tape.matmul(inner, p(l, "ff2.w")), p(l, "ff2.b"));
    h = tape.layer_norm(tape.add(h1, ffn), p(l, "ln2.gamma"), p(l, "ln2.beta"), nn::kLayerNormEps);
  }
  return h;
}

VaeModel VaeModel::create(const VaeArchitecture& arch, std::uint64_t seed) {
  if (arch.layout.tokens() == 0) throw DimensionError("token layout has no columns");
  if (arch.hidden == 0 || arch.layers == 0) throw ConfigError("VAE needs hidden > 0 and layers > 0");
  VaeModel model{arch, {}};
  Rng rng(derive_seed(seed, 0x7661e));
  init_tokenizer(model.params, arch.layout, rng);
  init_transformer_stack(model.params, kEncoderMu, arch.layers, arch.layout.d, arch.hidden, rng);
  init_transformer_stack(model.params, kEncoderLogSigma, arch.layers, arch.layout.d, arch.hidden,
                         rng);
  init_transformer_stack(model.params, kDecoder, arch.layers, arch.layout.d, arch.hidden, rng);
  init_detokenizer(model.params, arch.layout, rng);
  return model;
}

std::pair<nn::Tensor, nn::Tensor> encode(const nn::Tensor& tokens, const VaeModel& model) {
  const auto& layout = model.arch.layout;
  if (tokens.rows() != layout.tokens() || tokens.cols() != layout.d) {
    throw DimensionError("token matrix " + tokens.shape_string() + " does not match layout");
  }
  nn::Tape tape;
  const auto e = tape.constant(tokens);
  const auto mu = transformer_stack(tape, model.params, kEncoderMu, model.arch.layers, e,
                                    layout.tokens());
  const auto ls = transformer_stack(tape, model.params, kEncoderLogSigma, model.arch.layers, e,
                                    layout.tokens());
  require_finite(tape.value(mu), "mu encoder");
  require_finite(tape.value(ls), "log-sigma encoder");
  return {tape.value(mu), tape.value(ls)};
}

nn::Tensor reparameterize(const nn::Tensor& mu, const nn::Tensor& log_sigma,
                          const nn::Tensor& noise) {
  if (mu.rows() != log_sigma.rows() || mu.cols() != log_sigma.cols() || mu.rows() != noise.rows() ||
      mu.cols() != noise.cols()) {
    throw DimensionError("reparameterize shape mismatch");
  }
  nn::Tensor z(mu.rows(), mu.cols());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double sigma = std::exp(log_sigma[i]);
    z[i] = sigma == 0.0 ? mu[i] : mu[i] + sigma * noise[i];
  }
  return z;
}

nn::Tensor decode(const nn::Tensor& latent, const VaeModel& model) {
  const auto& layout = model.arch.layout;
  if (latent.rows() != layout.tokens() || latent.cols() != layout.d) {
    throw DimensionError("latent matrix " + latent.shape_string() + " does not match layout");
  }
  nn::Tape tape;
  const auto out = transformer_stack(tape, model.params, kDecoder, model.arch.layers,
                                     tape.constant(latent), layout.tokens());
  require_finite(tape.value(out), "decoder");
  return tape.value(out);
}

VaeLoss vae_loss(std::span<const double> numerical, std::span<const int> categories,
                 const Detokenized& reconstruction, const nn::Tensor& mu,
                 const nn::Tensor& log_sigma, double beta) {
  if (numerical.size() != reconstruction.numerical.size() ||
      categories.size() != reconstruction.probabilities.size() || mu.rows() != log_sigma.rows() ||
      mu.cols() != log_sigma.cols()) {
    throw DimensionError("vae_loss shape mismatch");
  }
  VaeLoss loss;
  for (std::size_t i = 0; i < numerical.size(); ++i) {
    const double diff = reconstruction.numerical[i] - numerical[i];
    loss.recon += diff * diff;
  }
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const auto& p = reconstruction.probabilities[i];
    if (categories[i] < 0 || static_cast<std::size_t>(categories[i]) >= p.size()) {
      throw DimensionError("category index out of range in vae_loss");
    }
    loss.recon -= std::log(std::max(p[static_cast<std::size_t>(categories[i])], kProbabilityFloor));
  }
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double ls = log_sigma[i];
    loss.kl += 0.5 * (mu[i] * mu[i] + std::exp(2.0 * ls) - 2.0 * ls - 1.0);
  }
  if (mu.size() > 0) loss.kl /= static_cast<double>(mu.size());
  loss.total = loss.recon + beta * loss.kl;
  return loss;
}

VaeBatchLoss vae_batch_loss(nn::Tape& tape, const VaeArchitecture& arch,
                            const nn::ParamStore& params, const nn::Tensor& numerical,
                            std::span<const int> categories, const nn::Tensor& noise, double beta) {
  const auto& layout = arch.layout;
  const std::size_t batch = numerical.rows();
  const std::size_t m = layout.tokens();
  if (noise.rows() != batch * m || noise.cols() != layout.d) {
    throw DimensionError("noise must be (B*M) x d");
  }
  const auto tokens = tokenize_batch(tape, params, layout, numerical, categories);
  const auto mu = transformer_stack(tape, params, kEncoderMu, arch.layers, tokens, m);
  const auto ls = transformer_stack(tape, params, kEncoderLogSigma, arch.layers, tokens, m);
  const auto z = tape.add(mu, tape.mul(tape.exp(ls), tape.constant(noise)));
  const auto decoded = transformer_stack(tape, params, kDecoder, arch.layers, z, m);
  const auto heads = detokenize_batch(tape, params, layout, decoded);

  nn::Var recon;
  const auto accumulate = [&](nn::Var term) { recon = recon.valid() ? tape.add(recon, term) : term; };
  for (std::size_t i = 0; i < heads.numerical.size(); ++i) {
    nn::Tensor target(batch, 1);
    for (std::size_t b = 0; b < batch; ++b) target(b, 0) = numerical(b, i);
    accumulate(tape.mse(heads.numerical[i], target));
  }
  const std::size_t mc = layout.num_categorical();
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < heads.logits.size(); ++i) {
    for (std::size_t b = 0; b < batch; ++b) labels[b] = categories[b * mc + i];
    accumulate(tape.softmax_cross_entropy(heads.logits[i], labels));
  }
  const auto kl = tape.kl_standard_normal(mu, ls);
  return {tape.add(recon, tape.scale(kl, beta)), recon, kl};
}

BetaScheduler BetaScheduler::start(double beta_max, double beta_min, double decay,
                                   std::size_t patience) {
  if (!(beta_min > 0.0) || beta_min > beta_max) throw ConfigError("need 0 < beta_min <= beta_max");
  if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("beta decay must lie in (0, 1)");
  if (patience == 0) throw ConfigError("beta patience must be positive");
  BetaScheduler s;
  s.beta = beta_max;
  s.beta_max = beta_max;
  s.beta_min = beta_min;
  s.decay = decay;
  s.patience = patience;
  return s;
}

double beta_step(BetaScheduler& s, double epoch_recon) {
  if (epoch_recon < s.best) {
    s.best = epoch_recon;
    s.stall = 0;
  } else if (++s.stall >= s.patience) {
    // Closed form rather than repeated multiplication, so beta after k
    // decays is beta_max * lambda^k without accumulated rounding.
    ++s.decays;
    s.beta = std::max(s.beta_max * std::pow(s.decay, static_cast<double>(s.decays)), s.beta_min);
    s.stall = 0;
  }
  return s.beta;
}

VaeTrainResult train_vae(const table::ProcessedTable& data, const TokenLayout& layout,
                         const VaeConfig& config, std::uint64_t seed,
                         const VaeEpochCallback& on_epoch) {
  check_data(data, layout);
  if (data.rows == 0) throw InputError("cannot train the VAE on an empty table");
  if (config.batch_size == 0 || config.epochs == 0) throw ConfigError("epochs and batch size must be positive");
  if (layout.d != config.d) throw ConfigError("token layout width differs from config d");

  VaeTrainResult result{VaeModel::create({layout, config.hidden, config.layers}, seed), {}, {}};
  auto& model = result.model;
  auto scheduler =
      BetaScheduler::start(config.beta_max, config.beta_min, config.beta_decay, config.patience);

  Rng rng(derive_seed(seed, 0x7261696e));
  const std::size_t n = data.rows;
  const std::size_t batch_size = std::min(config.batch_size, n);
  const std::size_t m = layout.tokens();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  nn::Tensor numerical;
  std::vector<int> categories;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double recon_sum = 0.0;
    double kl_sum = 0.0;
    for (std::size_t first = 0; first < n; first += batch_size) {
      const std::size_t count = std::min(batch_size, n - first);
      gather_batch(data, std::span(order).subspan(first, count), layout.num_categorical(), numerical,
                   categories);
      nn::Tensor noise(count * m, layout.d);
      for (double& v : noise.data()) v = standard_normal(rng);

      nn::Tape tape;
      const auto loss = vae_batch_loss(tape, model.arch, model.params, numerical, categories,
                                       noise, scheduler.beta);
      const double total = tape.value(loss.total)(0, 0);
      if (!std::isfinite(total)) {
        throw NumericError("VAE loss became non-finite at epoch " + std::to_string(epoch) +
                           " (recon " + std::to_string(tape.value(loss.recon)(0, 0)) + ", kl " +
                           std::to_string(tape.value(loss.kl)(0, 0)) + ", beta " +
                           std::to_string(scheduler.beta) + ")");
      }
      tape.backward(loss.total);
      nn::adam_step(model.params, tape.parameter_gradients(model.params), config.adam);
      recon_sum += tape.value(loss.recon)(0, 0) * static_cast<double>(count);
      kl_sum += tape.value(loss.kl)(0, 0) * static_cast<double>(count);
    }
    const VaeEpoch entry{epoch, recon_sum / static_cast<double>(n), kl_sum / static_cast<double>(n),
                         scheduler.beta};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    beta_step(scheduler, entry.recon);
  }
  result.latents = extract_latents(model, data, config.latent_source, derive_seed(seed, 0x6c6174));
  return result;
}

std::pair<nn::Tensor, nn::Tensor> encode_rows(const VaeModel& model,
                                              const table::ProcessedTable& data) {
  const auto& layout = model.arch.layout;
  check_data(data, layout);
  const std::size_t width = layout.latent_width();
  nn::Tensor mu(data.rows, width);
  nn::Tensor ls(data.rows, width);
  const std::size_t chunks = (data.rows + kInferenceChunk - 1) / kInferenceChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t first = c * kInferenceChunk;
    const std::size_t count = std::min(kInferenceChunk, data.rows - first);
    std::vector<std::size_t> rows(count);
    std::iota(rows.begin(), rows.end(), first);
    nn::Tensor numerical;
    std::vector<int> categories;
    gather_batch(data, rows, layout.num_categorical(), numerical, categories);
    nn::Tape tape;
    const auto tokens = tokenize_batch(tape, model.params, layout, numerical, categories);
    const auto m = transformer_stack(tape, model.params, kEncoderMu, model.arch.layers, tokens,
                                     layout.tokens());
    const auto s = transformer_stack(tape, model.params, kEncoderLogSigma, model.arch.layers,
                                     tokens, layout.tokens());
    // (count*M) x d and count x (M*d) share the same row-major storage.
    std::copy_n(tape.value(m).data().begin(), count * width, mu.row_span(first).begin());
    std::copy_n(tape.value(s).data().begin(), count * width, ls.row_span(first).begin());
  });
  require_finite(mu, "mu encoder");
  require_finite(ls, "log-sigma encoder");
  return {std::move(mu), std::move(ls)};
}

nn::Tensor extract_latents(const VaeModel& model, const table::ProcessedTable& data,
                           LatentSource source, std::uint64_t seed) {
  auto [mu, ls] = encode_rows(model, data);
  if (source == LatentSource::Mean) return mu;
  for (std::size_t r = 0; r < mu.rows(); ++r) {
    Rng rng(derive_seed(seed, r));
    for (std::size_t j = 0; j < mu.cols(); ++j) {
      mu(r, j) += std::exp(ls(r, j)) * standard_normal(rng);
    }
  }
  return mu;
}

table::ProcessedTable decode_rows(const VaeModel& model, const nn::Tensor& latents,
                                  CategoryDecode category_decode, std::uint64_t seed) {
  const auto& layout = model.arch.layout;
  const std::size_t width = layout.latent_width();
  if (latents.cols() != width) {
    throw DimensionError("latent rows have width " + std::to_string(latents.cols()) +
                         ", expected " + std::to_string(width));
  }
  require_finite(latents, "latent input");
  const std::size_t n = latents.rows();
  const std::size_t mn = layout.num_numerical;
  const std::size_t mc = layout.num_categorical();
  table::ProcessedTable out;
  out.rows = n;
  out.numerical = nn::Tensor(n, mn);
  out.categorical.assign(n * mc, 0);
  const std::size_t chunks = (n + kInferenceChunk - 1) / kInferenceChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t first = c * kInferenceChunk;
    const std::size_t count = std::min(kInferenceChunk, n - first);
    nn::Tensor z(count * layout.tokens(), layout.d);
    std::copy_n(latents.row_span(first).begin(), count * width, z.data().begin());
    nn::Tape tape;
    const auto decoded = transformer_stack(tape, model.params, kDecoder, model.arch.layers,
                                           tape.constant(std::move(z)), layout.tokens());
    const auto heads = detokenize_batch(tape, model.params, layout, decoded);
    for (std::size_t i = 0; i < mn; ++i) {
      const auto& v = tape.value(heads.numerical[i]);
      for (std::size_t b = 0; b < count; ++b) out.numerical(first + b, i) = v(b, 0);
    }
    for (std::size_t i = 0; i < mc; ++i) {
      const auto& logits = tape.value(heads.logits[i]);
      const auto probs = nn::softmax_rows(logits);
      for (std::size_t b = 0; b < count; ++b) {
        const auto row = logits.row_span(b);
        int label = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        if (category_decode == CategoryDecode::Sample) {
          // One stream per (row, column) keeps draws independent of chunking.
          Rng rng(derive_seed(seed, (first + b) * mc + i));
          const auto p = probs.row_span(b);
          std::discrete_distribution<int> draw(p.begin(), p.end());
          label = draw(rng);
        }
        out.categorical[(first + b) * mc + i] = label;
      }
    }
  });
  require_finite(out.numerical, "decoder");
  return out;
}

void write_epoch_log(std::ostream& out, const std::vector<VaeEpoch>& log) {
  out << "epoch,recon,kl,beta\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << table::format_number(e.recon) << ',' << table::format_number(e.kl)
        << ',' << table::format_number(e.beta) << '\n';
  }
}

}  // namespace tabforge
