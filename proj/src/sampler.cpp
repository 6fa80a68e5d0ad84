#include "tabforge/sampler.hpp"

#include <cmath>

#include "tabforge/error.hpp"

namespace tabforge {

namespace {

constexpr std::size_t kSampleChunk = 256;

}  // namespace

TimeGrid time_grid(std::size_t steps, double sigma_min, double sigma_max, double rho) {
  if (steps == 0) throw InputError("the time grid needs at least one step");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) {
    throw InputError("the time grid needs 0 < sigma_min < sigma_max");
  }
  if (!(rho > 0.0)) throw InputError("the grid exponent must be positive");
  TimeGrid grid;
  grid.times.reserve(steps + 1);
  grid.times.push_back(sigma_max);
  if (steps > 1) {
    const double hi = std::pow(sigma_max, 1.0 / rho);
    const double lo = std::pow(sigma_min, 1.0 / rho);
    const double last = static_cast<double>(steps - 1);
    for (std::size_t k = steps - 1; k-- > 0;) {
      const double frac = 1.0 - static_cast<double>(k) / last;
      grid.times.push_back(std::pow(hi + frac * (lo - hi), rho));
    }
    // The closed form can round to something other than sigma_min.
    grid.times.back() = sigma_min;
  }
  grid.times.push_back(0.0);
  return grid;
}

std::string to_string(SamplerMode mode) { return mode == SamplerMode::Ode ? "ode" : "sde"; }

SamplerMode parse_sampler_mode(const std::string& text) {
  if (text == "ode") return SamplerMode::Ode;
  if (text == "sde") return SamplerMode::Sde;
  throw ConfigError("sampler mode must be 'ode' or 'sde', got '" + text + "'");
}

nn::Tensor reverse_step(const nn::Tensor& z_t, double t_hi, double t_lo, const EpsPredictor& eps,
                        const NoiseSchedule& schedule, SamplerMode mode, Rng& rng) {
  if (!(t_hi > t_lo) || !(t_lo >= 0.0)) {
    throw InputError("reverse step needs t_hi > t_lo >= 0, got " + std::to_string(t_hi) + " -> " +
                     std::to_string(t_lo));
  }
  const auto eps_hat = eps(z_t, t_hi);
  if (eps_hat.rows() != z_t.rows() || eps_hat.cols() != z_t.cols()) {
    throw DimensionError("noise prediction shape " + eps_hat.shape_string() + " differs from " +
                         z_t.shape_string());
  }
  const auto score = score_from_eps(eps_hat, t_hi, schedule);
  const double rate = schedule.sigma_dot(t_hi) * schedule.sigma(t_hi);
  const double dt = t_hi - t_lo;
  nn::Tensor out = z_t;
  const auto v = out.data();
  const auto s = score.data();
  if (mode == SamplerMode::Ode) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += dt * rate * s[i];
  } else {
    const double noise = std::sqrt(2.0 * rate * dt);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] += 2.0 * rate * s[i] * dt + noise * standard_normal(rng);
    }
  }
  return out;
}

nn::Tensor reverse_step(const nn::Tensor& z_t, double t_hi, double t_lo,
                        const DiffusionModel& model, SamplerMode mode, Rng& rng) {
  const EpsPredictor eps = [&](const nn::Tensor& z, double t) { return denoise_eps(z, t, model); };
  return reverse_step(z_t, t_hi, t_lo, eps, model.schedule, mode, rng);
}

nn::Tensor sample_normalized(const DiffusionModel& model, std::size_t n_rows,
                             const SamplerConfig& config, std::uint64_t seed) {
  const std::size_t width = model.arch.width;
  const auto grid =
      time_grid(config.steps, model.schedule.sigma_min, model.schedule.sigma_max, config.rho);
  nn::Tensor out(n_rows, width);
  const std::size_t chunks = (n_rows + kSampleChunk - 1) / kSampleChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t first = c * kSampleChunk;
    const std::size_t count = std::min(kSampleChunk, n_rows - first);
    Rng rng(derive_seed(seed, c));
    // Prior N(0, sigma(T)^2 I) with T = sigma_max.
    const double prior = model.schedule.sigma(grid.times.front());
    nn::Tensor z(count, width);
    for (double& v : z.data()) v = prior * standard_normal(rng);
    for (std::size_t i = 0; i + 1 < grid.times.size(); ++i) {
      z = reverse_step(z, grid.times[i], grid.times[i + 1], model, config.mode, rng);
    }
    std::copy(z.data().begin(), z.data().end(), out.row_span(first).begin());
  });
  if (!out.all_finite()) throw NumericError("reverse process produced non-finite latents");
  return out;
}

nn::Tensor sample_latents(const DiffusionModel& model, std::size_t n_rows,
                          const SamplerConfig& config, std::uint64_t seed) {
  return model.normalizer.denormalize(sample_normalized(model, n_rows, config, seed));
}

void check_compatible(const VaeModel& vae, const DiffusionModel& diffusion,
                      const table::PreprocessState& preprocess) {
  const auto& layout = vae.arch.layout;
  if (layout.num_numerical != preprocess.numerical.size() ||
      layout.category_counts != preprocess.category_counts()) {
    throw CompatibilityError("VAE token layout does not match the preprocessing state");
  }
  if (diffusion.arch.width != layout.latent_width() ||
      diffusion.normalizer.mean.cols() != layout.latent_width()) {
    throw CompatibilityError("diffusion model width " + std::to_string(diffusion.arch.width) +
                             " does not match VAE latent width " +
                             std::to_string(layout.latent_width()));
  }
}

table::Table generate(const VaeModel& vae, const DiffusionModel& diffusion,
                      const table::PreprocessState& preprocess, std::size_t n_rows,
                      const SamplerConfig& config, std::uint64_t seed) {
  check_compatible(vae, diffusion, preprocess);
  const auto latents = sample_latents(diffusion, n_rows, config, derive_seed(seed, 0x7a));
  const auto processed =
      decode_rows(vae, latents, config.category_decode, derive_seed(seed, 0x63617465));
  return table::invert_preprocess(processed, preprocess);
}

}  // namespace tabforge
