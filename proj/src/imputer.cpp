#include "tabforge/imputer.hpp"

#include <algorithm>
#include <cmath>

#include "tabforge/error.hpp"
#include "tabforge/tokenizer.hpp"

namespace tabforge {

namespace {

constexpr std::size_t kImputeChunk = 256;

void check_models(const VaeModel& vae, const DiffusionModel& diffusion,
                  const table::PreprocessState& preprocess) {
  if (vae.params.size() == 0 || diffusion.params.size() == 0) {
    throw CompatibilityError("imputation needs a trained VAE and diffusion model");
  }
  check_compatible(vae, diffusion, preprocess);
  if (!(vae.arch.layout.num_numerical == preprocess.schema.num_numerical() &&
        vae.arch.layout.num_categorical() == preprocess.schema.num_categorical())) {
    throw CompatibilityError("models were trained on a different schema");
  }
}

}  // namespace

bool LatentMask::all_known() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 1.0; });
}

LatentMask build_mask(const table::TableSchema& schema, std::span<const std::size_t> missing_numerical,
                      std::span<const std::size_t> missing_categorical, std::size_t d) {
  if (d == 0) throw InputError("token width must be positive");
  const std::size_t mn = schema.num_numerical();
  const std::size_t mc = schema.num_categorical();
  LatentMask mask{std::vector<double>((mn + mc) * d, 1.0)};
  const auto clear = [&](std::size_t token) {
    std::fill_n(mask.values.begin() + static_cast<std::ptrdiff_t>(token * d), d, 0.0);
  };
  for (std::size_t b : missing_numerical) {
    if (b >= mn) throw InputError("numerical column " + std::to_string(b) + " out of range");
    clear(b);
  }
  for (std::size_t b : missing_categorical) {
    if (b >= mc) throw InputError("categorical column " + std::to_string(b) + " out of range");
    clear(mn + b);
  }
  return mask;
}

MissingCells missing_cells(const table::Table& table, std::size_t row,
                           std::span<const std::size_t> forced) {
  const auto& schema = table.schema();
  std::vector<bool> force(schema.size(), false);
  for (std::size_t c : forced) {
    if (c >= schema.size()) throw InputError("masked column " + std::to_string(c) + " out of range");
    force[c] = true;
  }
  MissingCells out;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const std::size_t b = schema.block_index(c);
    if (schema.columns()[c].kind == table::ColumnKind::Numerical) {
      if (force[c] || table::is_missing(table.numerical(row, b))) out.numerical.push_back(b);
    } else if (force[c] || table.categorical(row, b) == table::kMissingCategory) {
      out.categorical.push_back(b);
    }
  }
  return out;
}

MaskedRow prepare_masked_row(const table::Table& table, std::size_t row,
                             const table::PreprocessState& state, const MissingCells& missing) {
  const std::size_t mn = state.numerical.size();
  const std::size_t mc = state.categorical.size();
  MaskedRow out;
  out.numerical.resize(mn);
  out.categorical.resize(mc);
  for (std::size_t b = 0; b < mn; ++b) {
    const bool hidden = std::find(missing.numerical.begin(), missing.numerical.end(), b) !=
                        missing.numerical.end();
    const auto& q = state.numerical[b];
    const double raw = table.numerical(row, b);
    out.numerical[b] = q.forward(hidden || table::is_missing(raw) ? q.fill : raw);
  }
  for (std::size_t b = 0; b < mc; ++b) {
    const bool hidden = std::find(missing.categorical.begin(), missing.categorical.end(), b) !=
                        missing.categorical.end();
    out.categorical[b] =
        hidden ? kUniformCategory : state.categorical[b].encode(table.label(row, b));
  }
  return out;
}

nn::Tensor renoise(const nn::Tensor& z_lo, double t_hi, double t_lo, const NoiseSchedule& schedule,
                   Rng& rng) {
  const double s_hi = schedule.sigma(t_hi);
  const double s_lo = schedule.sigma(t_lo);
  if (!(s_hi >= s_lo)) throw InputError("renoise needs sigma(t_hi) >= sigma(t_lo)");
  const double scale = std::sqrt(s_hi * s_hi - s_lo * s_lo);
  nn::Tensor out = z_lo;
  for (double& v : out.data()) v += scale * standard_normal(rng);
  return out;
}

nn::Tensor impute_latents(const nn::Tensor& known, const nn::Tensor& mask,
                          const DiffusionModel& model, const ImputeConfig& config, Rng& rng) {
  if (config.resample == 0) throw ConfigError("resampling count U must be at least 1");
  if (mask.rows() != known.rows() || mask.cols() != known.cols()) {
    throw DimensionError("mask shape " + mask.shape_string() + " differs from latents " +
                         known.shape_string());
  }
  const auto& schedule = model.schedule;
  const auto grid = time_grid(config.steps, schedule.sigma_min, schedule.sigma_max, config.rho);
  const auto& times = grid.times;
  const auto noisy = [&](double t) {
    const double s = schedule.sigma(t);
    nn::Tensor out = known;
    for (double& v : out.data()) v += s * standard_normal(rng);
    return out;
  };
  nn::Tensor z_t = noisy(times.front());
  nn::Tensor z_lo;
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    const double t_hi = times[i];
    const double t_lo = times[i + 1];
    for (std::size_t u = 1; u <= config.resample; ++u) {
      const auto known_part = noisy(t_lo);
      z_lo = reverse_step(z_t, t_hi, t_lo, model, config.mode, rng);
      const auto m = mask.data();
      const auto k = known_part.data();
      const auto z = z_lo.data();
      for (std::size_t j = 0; j < z.size(); ++j) z[j] = m[j] * k[j] + (1.0 - m[j]) * z[j];
      // No resampling on the final step into t = 0.
      if (u < config.resample && t_lo > 0.0) z_t = renoise(z_lo, t_hi, t_lo, schedule, rng);
    }
    z_t = z_lo;
  }
  return z_t;
}

table::Table impute(const table::Table& input, const VaeModel& vae, const DiffusionModel& diffusion,
                    const table::PreprocessState& preprocess, const ImputeConfig& config,
                    std::uint64_t seed, std::span<const std::size_t> forced) {
  check_models(vae, diffusion, preprocess);
  if (!(input.schema() == preprocess.schema)) {
    throw SchemaError("input columns do not match the schema the models were trained on");
  }
  if (config.resample == 0) throw ConfigError("resampling count U must be at least 1");
  const auto& layout = vae.arch.layout;
  const std::size_t mn = layout.num_numerical;
  const std::size_t mc = layout.num_categorical();
  const std::size_t width = layout.latent_width();

  std::vector<std::size_t> rows;
  std::vector<MissingCells> cells;
  for (std::size_t r = 0; r < input.rows(); ++r) {
    auto missing = missing_cells(input, r, forced);
    if (missing.empty()) continue;
    rows.push_back(r);
    cells.push_back(std::move(missing));
  }
  table::Table out = input;
  if (rows.empty()) return out;

  const std::size_t n = rows.size();
  table::ProcessedTable masked;
  masked.rows = n;
  masked.numerical = nn::Tensor(n, mn);
  masked.categorical.assign(n * mc, 0);
  nn::Tensor mask(n, width);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = prepare_masked_row(input, rows[i], preprocess, cells[i]);
    std::copy(row.numerical.begin(), row.numerical.end(), masked.numerical.row_span(i).begin());
    std::copy(row.categorical.begin(), row.categorical.end(),
              masked.categorical.begin() + static_cast<std::ptrdiff_t>(i * mc));
    const auto m = build_mask(preprocess.schema, cells[i].numerical, cells[i].categorical, layout.d);
    std::copy(m.values.begin(), m.values.end(), mask.row_span(i).begin());
  }

  const auto known = diffusion.normalizer.normalize(encode_rows(vae, masked).first);
  nn::Tensor z0(n, width);
  const std::size_t chunks = (n + kImputeChunk - 1) / kImputeChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t first = c * kImputeChunk;
    const std::size_t count = std::min(kImputeChunk, n - first);
    const auto slice = [&](const nn::Tensor& t) {
      nn::Tensor s(count, width);
      std::copy_n(t.row_span(first).begin(), count * width, s.data().begin());
      return s;
    };
    Rng rng(derive_seed(seed, c));
    const auto z = impute_latents(slice(known), slice(mask), diffusion, config, rng);
    std::copy(z.data().begin(), z.data().end(), z0.row_span(first).begin());
  });
  if (!z0.all_finite()) throw NumericError("imputation produced non-finite latents");

  const auto decoded =
      table::invert_preprocess(decode_rows(vae, diffusion.normalizer.denormalize(z0)), preprocess);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = rows[i];
    for (std::size_t b : cells[i].numerical) out.numerical(r, b) = decoded.numerical(i, b);
    for (std::size_t b : cells[i].categorical) {
      const auto label = decoded.label(i, b);
      out.categorical(r, b) = label ? out.intern(b, *label) : table::kMissingCategory;
    }
  }
  return out;
}

}  // namespace tabforge
