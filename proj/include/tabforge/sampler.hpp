#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tabforge/common.hpp"
#include "tabforge/diffusion.hpp"
#include "tabforge/nn/tensor.hpp"
#include "tabforge/table/preprocess.hpp"
#include "tabforge/table/table.hpp"
#include "tabforge/vae.hpp"

namespace tabforge {

/// Descending reverse-process times: N noise levels from sigma_max down to
/// sigma_min, followed by a final 0. Every entry is strictly below the last.
struct TimeGrid {
  std::vector<double> times;

  std::size_t steps() const noexcept { return times.empty() ? 0 : times.size() - 1; }
};

// t_i = (smax^(1/rho) + (1 - i/(N-1)) (smin^(1/rho) - smax^(1/rho)))^rho for
// i = N-1 .. 0, then 0. N = 1 gives [sigma_max, 0].
TimeGrid time_grid(std::size_t steps, double sigma_min, double sigma_max, double rho);

enum class SamplerMode { Ode, Sde };

std::string to_string(SamplerMode mode);
SamplerMode parse_sampler_mode(const std::string& text);

// Noise prediction for a batch of rows at a single time.
using EpsPredictor = std::function<nn::Tensor(const nn::Tensor& z_t, double t)>;

// One Euler step from t_hi down to t_lo with the score taken at t_hi.
// ODE: z - (t_lo - t_hi) sigma' sigma score.
// SDE: z + 2 sigma' sigma score dt + sqrt(2 sigma' sigma dt) eps, dt = t_hi - t_lo.
nn::Tensor reverse_step(const nn::Tensor& z_t, double t_hi, double t_lo, const EpsPredictor& eps,
                        const NoiseSchedule& schedule, SamplerMode mode, Rng& rng);
nn::Tensor reverse_step(const nn::Tensor& z_t, double t_hi, double t_lo,
                        const DiffusionModel& model, SamplerMode mode, Rng& rng);

struct SamplerConfig {
  std::size_t steps = 20;
  double rho = 7.0;
  SamplerMode mode = SamplerMode::Ode;
  CategoryDecode category_decode = CategoryDecode::Argmax;
};

// Reverse-process samples in the diffusion model's normalized space, rows
// drawn in chunks of 256 with per-chunk seeds.
nn::Tensor sample_normalized(const DiffusionModel& model, std::size_t n_rows,
                             const SamplerConfig& config, std::uint64_t seed);

// Latents in VAE space: de-standardized reverse-process samples.
nn::Tensor sample_latents(const DiffusionModel& model, std::size_t n_rows,
                          const SamplerConfig& config, std::uint64_t seed);

// Full pipeline: prior draw, reverse process, VAE decode, inverse
// preprocessing. Throws CompatibilityError when the models disagree on shape.
table::Table generate(const VaeModel& vae, const DiffusionModel& diffusion,
                      const table::PreprocessState& preprocess, std::size_t n_rows,
                      const SamplerConfig& config, std::uint64_t seed);

void check_compatible(const VaeModel& vae, const DiffusionModel& diffusion,
                      const table::PreprocessState& preprocess);

}  // namespace tabforge
