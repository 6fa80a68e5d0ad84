#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tabforge/nn/param_store.hpp"
#include "tabforge/nn/tape.hpp"
#include "tabforge/nn/tensor.hpp"
#include "tabforge/table/preprocess.hpp"
#include "tabforge/tokenizer.hpp"

namespace tabforge {

struct VaeArchitecture {
  TokenLayout layout;
  std::size_t hidden = 128;  // FFN width D
  std::size_t layers = 2;    // transformer layers per stack

  bool operator==(const VaeArchitecture&) const = default;
};

/// Tokenizer, mu-encoder, log-sigma-encoder, decoder and detokenizer
/// parameters in one store (prefixes "tokenizer.", "encoder_mu.",
/// "encoder_logsigma.", "decoder.", "detokenizer.").
struct VaeModel {
  VaeArchitecture arch;
  nn::ParamStore params;

  static VaeModel create(const VaeArchitecture& arch, std::uint64_t seed);
};

// Post-LN transformer stack over groups of `tokens` consecutive rows:
// H1 = LN(H + Attn(H)), H2 = LN(H1 + ReLU(H1 W1 + b1) W2 + b2), per layer.
nn::Var transformer_stack(nn::Tape& tape, const nn::ParamStore& store, const std::string& prefix,
                          std::size_t layers, nn::Var tokens, std::size_t group);
void init_transformer_stack(nn::ParamStore& store, const std::string& prefix, std::size_t layers,
                            std::size_t d, std::size_t hidden, Rng& rng);

// Single token matrix (M x d) in, (mu, log sigma) out.
std::pair<nn::Tensor, nn::Tensor> encode(const nn::Tensor& tokens, const VaeModel& model);
nn::Tensor reparameterize(const nn::Tensor& mu, const nn::Tensor& log_sigma,
                          const nn::Tensor& noise);
nn::Tensor decode(const nn::Tensor& latent, const VaeModel& model);

inline constexpr double kProbabilityFloor = 1e-12;

struct VaeLoss {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

// One row: recon = sum of squared numerical errors + sum of categorical
// cross-entropies (log clamped at 1e-12); kl = mean over entries of
// (mu^2 + sigma^2 - log sigma^2 - 1) / 2; total = recon + beta * kl.
VaeLoss vae_loss(std::span<const double> numerical, std::span<const int> categories,
                 const Detokenized& reconstruction, const nn::Tensor& mu,
                 const nn::Tensor& log_sigma, double beta);

struct VaeBatchLoss {
  nn::Var total;
  nn::Var recon;
  nn::Var kl;
};

// Batch loss on the tape, averaged over the batch. `noise` is (B*M) x d.
VaeBatchLoss vae_batch_loss(nn::Tape& tape, const VaeArchitecture& arch,
                            const nn::ParamStore& params, const nn::Tensor& numerical,
                            std::span<const int> categories, const nn::Tensor& noise, double beta);

struct BetaScheduler {
  double beta = 0.01;
  double beta_max = 0.01;
  double beta_min = 1e-5;
  double decay = 0.7;  // lambda
  std::size_t patience = 10;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stall = 0;
  std::size_t decays = 0;  // k: completed stall blocks

  static BetaScheduler start(double beta_max, double beta_min, double decay,
                             std::size_t patience);
};

// An epoch whose recon is not below the best so far counts as a stall;
// `patience` consecutive stalls make one decay: beta = max(beta_max lambda^k, beta_min).
double beta_step(BetaScheduler& scheduler, double epoch_recon);

enum class LatentSource { Mean, Sample };

struct VaeConfig {
  std::size_t d = 4;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t epochs = 400;
  std::size_t batch_size = 256;
  nn::AdamConfig adam{};
  double beta_max = 0.01;
  double beta_min = 1e-5;
  double beta_decay = 0.7;
  std::size_t patience = 10;
  LatentSource latent_source = LatentSource::Mean;
};

struct VaeEpoch {
  std::size_t epoch = 0;  // 1-based
  double recon = 0.0;
  double kl = 0.0;
  double beta = 0.0;
};

struct VaeTrainResult {
  VaeModel model;
  nn::Tensor latents;  // n x (M*d)
  std::vector<VaeEpoch> log;
};

using VaeEpochCallback = std::function<void(const VaeEpoch&)>;

VaeTrainResult train_vae(const table::ProcessedTable& data, const TokenLayout& layout,
                         const VaeConfig& config, std::uint64_t seed,
                         const VaeEpochCallback& on_epoch = {});

// Encoder outputs for every row, flattened to n x (M*d).
std::pair<nn::Tensor, nn::Tensor> encode_rows(const VaeModel& model,
                                              const table::ProcessedTable& data);
nn::Tensor extract_latents(const VaeModel& model, const table::ProcessedTable& data,
                           LatentSource source, std::uint64_t seed);

enum class CategoryDecode { Argmax, Sample };

// Decodes n x (M*d) latents into processed rows. Categories are the argmax
// of the logits, or a softmax draw seeded per cell when sampling.
table::ProcessedTable decode_rows(const VaeModel& model, const nn::Tensor& latents,
                                  CategoryDecode category_decode = CategoryDecode::Argmax,
                                  std::uint64_t seed = 0);

void write_epoch_log(std::ostream& out, const std::vector<VaeEpoch>& log);

}  // namespace tabforge
