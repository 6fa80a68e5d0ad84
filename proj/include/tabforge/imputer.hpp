#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tabforge/common.hpp"
#include "tabforge/diffusion.hpp"
#include "tabforge/sampler.hpp"
#include "tabforge/table/preprocess.hpp"
#include "tabforge/table/table.hpp"
#include "tabforge/vae.hpp"

namespace tabforge {

/// One entry per latent dimension: 1 = known, 0 = to be imputed. Column k of
/// the token order owns entries [k*d, (k+1)*d), all equal.
struct LatentMask {
  std::vector<double> values;

  bool all_known() const;
  bool operator==(const LatentMask&) const = default;
};

// Missing columns are block indices: numerical columns within the numerical
// block, categorical columns within the categorical block.
LatentMask build_mask(const table::TableSchema& schema, std::span<const std::size_t> missing_numerical,
                      std::span<const std::size_t> missing_categorical, std::size_t d);

/// Block indices of the cells to impute in one row.
struct MissingCells {
  std::vector<std::size_t> numerical;
  std::vector<std::size_t> categorical;

  bool empty() const noexcept { return numerical.empty() && categorical.empty(); }
};

// Cells that are empty in the row, plus every column listed in `forced`
// (schema positions).
MissingCells missing_cells(const table::Table& table, std::size_t row,
                           std::span<const std::size_t> forced = {});

/// Encoder input for one row: transformed numerical scores and category
/// indices, with kUniformCategory standing for [1/C, ..., 1/C].
struct MaskedRow {
  std::vector<double> numerical;
  std::vector<int> categorical;
};

// Missing numerical cells take the column's training mean (then the quantile
// transform); missing categorical cells take the uniform placeholder.
MaskedRow prepare_masked_row(const table::Table& table, std::size_t row,
                             const table::PreprocessState& state, const MissingCells& missing);

struct ImputeConfig {
  std::size_t resample = 5;  // U
  std::size_t steps = 20;    // N
  double rho = 7.0;
  SamplerMode mode = SamplerMode::Sde;
};

// z_hi = z_lo + sqrt(sigma(t_hi)^2 - sigma(t_lo)^2) eps.
nn::Tensor renoise(const nn::Tensor& z_lo, double t_hi, double t_lo, const NoiseSchedule& schedule,
                   Rng& rng);

// Masked reverse process with resampling on normalized latents. `known` and
// `mask` are B x width; the result is z_0. Known entries of z_0 equal `known`.
nn::Tensor impute_latents(const nn::Tensor& known, const nn::Tensor& mask,
                          const DiffusionModel& model, const ImputeConfig& config, Rng& rng);

// Fills the empty cells of `input` (and every cell of the `forced` columns).
// Known cells are copied from the input unchanged.
table::Table impute(const table::Table& input, const VaeModel& vae, const DiffusionModel& diffusion,
                    const table::PreprocessState& preprocess, const ImputeConfig& config,
                    std::uint64_t seed, std::span<const std::size_t> forced = {});

}  // namespace tabforge
