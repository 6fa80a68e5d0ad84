#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tabforge/common.hpp"
#include "tabforge/nn/param_store.hpp"
#include "tabforge/nn/tape.hpp"
#include "tabforge/nn/tensor.hpp"

namespace tabforge {

// Linear VE schedule: sigma(t) = t. Negative t is a DomainError.
double sigma(double t);
double sigma_dot(double t);
// g(t) = sqrt(2 sigma(t) sigma'(t)).
double diffusion_coefficient(double t);

/// Noise level as a function of time, with its derivative. The linear VE
/// schedule is the default; other schedules exist for comparison tests.
struct NoiseSchedule {
  std::function<double(double)> sigma = tabforge::sigma;
  std::function<double(double)> sigma_dot = tabforge::sigma_dot;
  double sigma_min = 0.002;
  double sigma_max = 80.0;

  static NoiseSchedule linear(double sigma_min = 0.002, double sigma_max = 80.0);
};

// z_t = z0 + sigma(t) * eps.
nn::Tensor perturb(const nn::Tensor& z0, double t, const nn::Tensor& eps);

struct TimeDistribution {
  double p_mean = -1.2;
  double p_std = 1.2;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
};

// t = exp(N(p_mean, p_std^2)) clipped to [sigma_min, sigma_max].
double sample_time(Rng& rng, const TimeDistribution& dist = {});

// Sinusoidal embedding of u = ln t: [cos(u f_k)..., sin(u f_k)...] with
// f_k = 10000^(-k / (width / 2)), k = 0 .. width/2 - 1. Width must be even.
nn::Tensor time_embedding(double t, std::size_t width);

/// Per-dimension standardization of latents; std is floored at 1e-6.
struct LatentNormalizer {
  nn::Tensor mean;  // 1 x width
  nn::Tensor std;   // 1 x width

  static constexpr double kStdFloor = 1e-6;
  static LatentNormalizer fit(const nn::Tensor& latents);
  nn::Tensor normalize(const nn::Tensor& latents) const;
  nn::Tensor denormalize(const nn::Tensor& normalized) const;
};

struct DenoiserArchitecture {
  std::size_t width = 0;     // M*d
  std::size_t hidden = 1024;  // d_hidden

  bool operator==(const DenoiserArchitecture&) const = default;
};

// FC_in (width -> h), FC1 (h -> 2h), FC2 (2h -> 2h), FC3 (2h -> h),
// FC_out (h -> width). Hidden weights uniform(+-1/sqrt(fan_in)); FC_out and
// all biases start at zero, so the network term of a fresh denoiser is 0.
void init_denoiser(nn::ParamStore& store, const DenoiserArchitecture& arch, Rng& rng);

// eps_hat = t z_t / (1 + t^2) + FC_out(h3) / sqrt(1 + t^2),
// h_in = FC_in(z_t / sqrt(1 + t^2)) + emb(t), h_{k+1} = SiLU(FC_{k+1}(h_k)).
// The first term is the exact answer for unit-Gaussian latents, so the
// network only learns the departure from it. One time per row of z_t.
nn::Var denoise_eps(nn::Tape& tape, const nn::ParamStore& store, const DenoiserArchitecture& arch,
                    const nn::Tensor& z_t, std::span<const double> times);

struct DiffusionModel {
  DenoiserArchitecture arch;
  nn::ParamStore params;
  LatentNormalizer normalizer;
  NoiseSchedule schedule;
};

// Eager forward on normalized latents (B x width, one time per row).
nn::Tensor denoise_eps(const nn::Tensor& z_t, std::span<const double> times,
                       const DiffusionModel& model);
nn::Tensor denoise_eps(const nn::Tensor& z_t, double t, const DiffusionModel& model);

// -eps_hat / sigma(t); t = 0 is a DomainError.
nn::Tensor score_from_eps(const nn::Tensor& eps_hat, double t,
                          const NoiseSchedule& schedule = {});

// Mean over rows of ||eps_theta(z0 + t eps, t) - eps||^2 with per-row t, eps
// drawn from rng. Returns a 1 x 1 tape value.
nn::Var diffusion_batch_loss(nn::Tape& tape, const nn::ParamStore& store,
                             const DenoiserArchitecture& arch, const nn::Tensor& z0, Rng& rng,
                             const TimeDistribution& times = {});
double diffusion_loss(const nn::Tensor& z0, Rng& rng, const DiffusionModel& model,
                      const TimeDistribution& times = {});

struct DiffusionConfig {
  std::size_t hidden = 1024;
  std::size_t steps = 4000;
  std::size_t batch_size = 256;
  nn::AdamConfig adam{};
  TimeDistribution times{};
};

struct DiffusionStep {
  std::size_t step = 0;  // 1-based
  double loss = 0.0;
};

struct DiffusionTrainResult {
  DiffusionModel model;
  std::vector<DiffusionStep> log;
};

using DiffusionStepCallback = std::function<void(const DiffusionStep&)>;

// Fits the normalizer, then trains on normalized latents (n x width).
DiffusionTrainResult train_diffusion(const nn::Tensor& latents, const DiffusionConfig& config,
                                     std::uint64_t seed,
                                     const DiffusionStepCallback& on_step = {});

void write_step_log(std::ostream& out, const std::vector<DiffusionStep>& log);

}  // namespace tabforge
