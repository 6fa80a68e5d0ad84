#include "tabforge/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "tabforge/error.hpp"
#include "tabforge/table/csv.hpp"

namespace tabforge {

double sigma(double t) {
  if (!(t >= 0.0)) throw DomainError("time must be non-negative, got " + std::to_string(t));
  return t;
}

double sigma_dot(double t) {
  if (!(t >= 0.0)) throw DomainError("time must be non-negative, got " + std::to_string(t));
  return 1.0;
}

double diffusion_coefficient(double t) { return std::sqrt(2.0 * sigma(t) * sigma_dot(t)); }

NoiseSchedule NoiseSchedule::linear(double sigma_min, double sigma_max) {
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) {
    throw ConfigError("need 0 < sigma_min < sigma_max");
  }
  NoiseSchedule s;
  s.sigma_min = sigma_min;
  s.sigma_max = sigma_max;
  return s;
}

nn::Tensor perturb(const nn::Tensor& z0, double t, const nn::Tensor& eps) {
  if (z0.rows() != eps.rows() || z0.cols() != eps.cols()) {
    throw DimensionError("perturb shape mismatch: " + z0.shape_string() + " vs " + eps.shape_string());
  }
  const double s = sigma(t);
  nn::Tensor out = z0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * eps[i];
  return out;
}

double sample_time(Rng& rng, const TimeDistribution& dist) {
  const double u = dist.p_mean + dist.p_std * standard_normal(rng);
  return std::clamp(std::exp(u), dist.sigma_min, dist.sigma_max);
}

namespace {

std::vector<double> embedding_frequencies(std::size_t width) {
  if (width == 0 || width % 2 != 0) throw DimensionError("time embedding width must be even");
  const std::size_t half = width / 2;
  std::vector<double> f(half);
  for (std::size_t k = 0; k < half; ++k) {
    f[k] = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
  }
  return f;
}

void write_embedding(double t, std::span<const double> freqs, std::span<double> out) {
  if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("time embedding needs finite t > 0");
  const double u = std::log(t);
  const std::size_t half = freqs.size();
  for (std::size_t k = 0; k < half; ++k) {
    out[k] = std::cos(u * freqs[k]);
    out[half + k] = std::sin(u * freqs[k]);
  }
}

}  // namespace

nn::Tensor time_embedding(double t, std::size_t width) {
  const auto freqs = embedding_frequencies(width);
  nn::Tensor e(1, width);
  write_embedding(t, freqs, e.data());
  return e;
}

LatentNormalizer LatentNormalizer::fit(const nn::Tensor& latents) {
  if (latents.rows() == 0) throw InputError("cannot fit latent statistics on zero rows");
  const std::size_t n = latents.rows();
  const std::size_t w = latents.cols();
  LatentNormalizer norm{nn::Tensor(1, w), nn::Tensor(1, w)};
  for (std::size_t j = 0; j < w; ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += latents(r, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (latents(r, j) - mean) * (latents(r, j) - mean);
    norm.mean(0, j) = mean;
    norm.std(0, j) = std::max(std::sqrt(var / static_cast<double>(n)), kStdFloor);
  }
  return norm;
}

nn::Tensor LatentNormalizer::normalize(const nn::Tensor& latents) const {
  if (latents.cols() != mean.cols()) throw DimensionError("latent width does not match normalizer");
  nn::Tensor out = latents;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) = (out(r, j) - mean(0, j)) / std(0, j);
  return out;
}

nn::Tensor LatentNormalizer::denormalize(const nn::Tensor& normalized) const {
  if (normalized.cols() != mean.cols()) throw DimensionError("latent width does not match normalizer");
  nn::Tensor out = normalized;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) = out(r, j) * std(0, j) + mean(0, j);
  return out;
}

namespace {

nn::Tensor uniform_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> dist(-bound, bound);
  nn::Tensor t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void check_arch(const DenoiserArchitecture& arch) {
  if (arch.width == 0) throw DimensionError("denoiser width must be positive");
  if (arch.hidden == 0 || arch.hidden % 2 != 0) throw ConfigError("d_hidden must be positive and even");
}

}  // namespace

void init_denoiser(nn::ParamStore& store, const DenoiserArchitecture& arch, Rng& rng) {
  check_arch(arch);
  const std::size_t h = arch.hidden;
  store.add("denoiser.fc_in.w", uniform_tensor(arch.width, h, rng));
  store.add("denoiser.fc_in.b", nn::Tensor(1, h));
  store.add("denoiser.fc1.w", uniform_tensor(h, 2 * h, rng));
  store.add("denoiser.fc1.b", nn::Tensor(1, 2 * h));
  store.add("denoiser.fc2.w", uniform_tensor(2 * h, 2 * h, rng));
  store.add("denoiser.fc2.b", nn::Tensor(1, 2 * h));
  store.add("denoiser.fc3.w", uniform_tensor(2 * h, h, rng));
  store.add("denoiser.fc3.b", nn::Tensor(1, h));
  store.add("denoiser.fc_out.w", nn::Tensor(h, arch.width));
  store.add("denoiser.fc_out.b", nn::Tensor(1, arch.width));
}

nn::Var denoise_eps(nn::Tape& tape, const nn::ParamStore& store, const DenoiserArchitecture& arch,
                    const nn::Tensor& z_t, std::span<const double> times) {
  check_arch(arch);
  if (z_t.cols() != arch.width || times.size() != z_t.rows()) {
    throw DimensionError("denoiser input " + z_t.shape_string() + " with " +
                         std::to_string(times.size()) + " times does not match width " +
                         std::to_string(arch.width));
  }
  nn::Tensor scaled = z_t;
  nn::Tensor skip = z_t;
  nn::Tensor c_out(z_t.rows(), z_t.cols());
  nn::Tensor embedding(z_t.rows(), arch.hidden);
  const auto freqs = embedding_frequencies(arch.hidden);
  for (std::size_t r = 0; r < z_t.rows(); ++r) {
    const double t = times[r];
    const double c_in = 1.0 / std::sqrt(1.0 + t * t);
    for (double& v : scaled.row_span(r)) v *= c_in;
    for (double& v : skip.row_span(r)) v *= t / (1.0 + t * t);
    for (double& v : c_out.row_span(r)) v = c_in;
    write_embedding(times[r], freqs, embedding.row_span(r));
  }
  const auto dense = [&](nn::Var x, const char* layer) {
    const std::string prefix = std::string("denoiser.") + layer;
    return tape.add_bias(tape.matmul(x, tape.param(store, prefix + ".w")),
                         tape.param(store, prefix + ".b"));
  };
  const auto h0 = dense(tape.constant(std::move(scaled)), "fc_in");
  const auto h_in = tape.add(h0, tape.constant(std::move(embedding)));
  const auto h1 = tape.silu(dense(h_in, "fc1"));
  const auto h2 = tape.silu(dense(h1, "fc2"));
  const auto h3 = tape.silu(dense(h2, "fc3"));
  return tape.add(tape.constant(std::move(skip)),
                  tape.mul(dense(h3, "fc_out"), tape.constant(std::move(c_out))));
}

nn::Tensor denoise_eps(const nn::Tensor& z_t, std::span<const double> times,
                       const DiffusionModel& model) {
  nn::Tape tape;
  const auto out = denoise_eps(tape, model.params, model.arch, z_t, times);
  if (!tape.value(out).all_finite()) throw NumericError("denoiser produced a non-finite value");
  return tape.value(out);
}

nn::Tensor denoise_eps(const nn::Tensor& z_t, double t, const DiffusionModel& model) {
  const std::vector<double> times(z_t.rows(), t);
  return denoise_eps(z_t, times, model);
}

nn::Tensor score_from_eps(const nn::Tensor& eps_hat, double t, const NoiseSchedule& schedule) {
  const double s = schedule.sigma(t);
  if (!(s > 0.0)) throw DomainError("score is undefined at zero noise level");
  nn::Tensor out = eps_hat;
  for (double& v : out.data()) v = -v / s;
  return out;
}

nn::Var diffusion_batch_loss(nn::Tape& tape, const nn::ParamStore& store,
                             const DenoiserArchitecture& arch, const nn::Tensor& z0, Rng& rng,
                             const TimeDistribution& time_dist) {
  if (z0.rows() == 0) throw InputError("diffusion loss needs a nonempty batch");
  std::vector<double> times(z0.rows());
  nn::Tensor eps(z0.rows(), z0.cols());
  nn::Tensor z_t(z0.rows(), z0.cols());
  for (std::size_t r = 0; r < z0.rows(); ++r) {
    times[r] = sample_time(rng, time_dist);
    for (std::size_t j = 0; j < z0.cols(); ++j) {
      eps(r, j) = standard_normal(rng);
      z_t(r, j) = z0(r, j) + times[r] * eps(r, j);
    }
  }
  const auto pred = denoise_eps(tape, store, arch, z_t, times);
  // mse averages over B * width entries; the objective sums over width.
  return tape.scale(tape.mse(pred, eps), static_cast<double>(z0.cols()));
}

double diffusion_loss(const nn::Tensor& z0, Rng& rng, const DiffusionModel& model,
                      const TimeDistribution& times) {
  nn::Tape tape;
  return tape.value(diffusion_batch_loss(tape, model.params, model.arch, z0, rng, times))(0, 0);
}

DiffusionTrainResult train_diffusion(const nn::Tensor& latents, const DiffusionConfig& config,
                                     std::uint64_t seed, const DiffusionStepCallback& on_step) {
  if (latents.rows() == 0) throw InputError("cannot train diffusion on zero latents");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!latents.all_finite()) throw NumericError("latents contain non-finite values");

  DiffusionTrainResult result;
  auto& model = result.model;
  model.arch = {latents.cols(), config.hidden};
  model.normalizer = LatentNormalizer::fit(latents);
  model.schedule = NoiseSchedule::linear(config.times.sigma_min, config.times.sigma_max);
  Rng init_rng(derive_seed(seed, 0x64696666));
  init_denoiser(model.params, model.arch, init_rng);

  const auto data = model.normalizer.normalize(latents);
  const std::size_t n = data.rows();
  const std::size_t batch = std::min(config.batch_size, n);
  Rng rng(derive_seed(seed, 0x73746570));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;
  nn::Tensor z0(batch, data.cols());

  result.log.reserve(config.steps);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto row = data.row_span(order[cursor++]);
      std::copy(row.begin(), row.end(), z0.row_span(b).begin());
    }
    nn::Tape tape;
    const auto loss = diffusion_batch_loss(tape, model.params, model.arch, z0, rng, config.times);
    const double value = tape.value(loss)(0, 0);
    if (!std::isfinite(value)) {
      throw NumericError("diffusion loss became non-finite at step " + std::to_string(step));
    }
    tape.backward(loss);
    nn::adam_step(model.params, tape.parameter_gradients(model.params), config.adam);
    result.log.push_back({step, value});
    if (on_step) on_step(result.log.back());
  }
  return result;
}

void write_step_log(std::ostream& out, const std::vector<DiffusionStep>& log) {
  out << "step,loss\n";
  for (const auto& s : log) out << s.step << ',' << table::format_number(s.loss) << '\n';
}

}  // namespace tabforge
