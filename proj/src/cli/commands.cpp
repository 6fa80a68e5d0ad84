#include "tabforge/cli/commands.hpp"

#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "tabforge/cli/container.hpp"
#include "tabforge/error.hpp"
#include "tabforge/eval.hpp"
#include "tabforge/imputer.hpp"
#include "tabforge/sampler.hpp"
#include "tabforge/table/csv.hpp"
#include "tabforge/table/preprocess.hpp"

namespace tabforge::cli {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const CompatibilityError*>(&e)) {
    return kExitSchema;
  }
  if (dynamic_cast<const ParseError*>(&e)) return kExitParse;
  if (dynamic_cast<const VersionError*>(&e)) return kExitVersion;
  if (dynamic_cast<const IntegrityError*>(&e)) return kExitIntegrity;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
      dynamic_cast<const FitError*>(&e)) {
    return kExitNumeric;
  }
  if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const StateError*>(&e)) {
    return kExitInput;
  }
  return kExitOther;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  return out;
}

void require(const std::string& value, const std::string& what) {
  if (value.empty()) throw ConfigError(what + " is required");
}

// A --schema given alongside a model must describe the same columns.
void check_schema(const RunConfig& config, const table::TableSchema& model_schema) {
  if (config.schema_path.empty()) return;
  if (table::TableSchema::load(config.schema_path) != model_schema) {
    throw SchemaError("schema " + config.schema_path + " differs from the model's schema");
  }
}

struct Models {
  LoadedVae vae;
  LoadedDiffusion diffusion;
};

Models load_models(const RunConfig& config, const ModelPaths& paths) {
  require(paths.vae, "--vae");
  require(paths.diffusion, "--diffusion");
  Models m{vae_from_container(load_container(paths.vae)),
           diffusion_from_container(load_container(paths.diffusion))};
  if (!(m.vae.preprocess.schema == m.diffusion.preprocess.schema)) {
    throw SchemaError("VAE and diffusion models were trained on different schemas");
  }
  check_schema(config, m.vae.preprocess.schema);
  return m;
}

}  // namespace

void cmd_train_vae(const RunConfig& config, const std::string& model_out,
                   const std::string& latents_out, const std::string& log_csv, std::ostream& log) {
  require(config.schema_path, "schema path");
  require(config.data_path, "training data path");
  require(model_out, "--out");
  require(latents_out, "--latents");
  const auto schema = table::TableSchema::load(config.schema_path);
  const auto data = table::load_csv(config.data_path, schema);
  if (data.rows() == 0) throw InputError(config.data_path + " has no rows");
  const auto preprocess = table::fit_preprocess(data);
  const auto processed = table::apply_preprocess(data, preprocess);
  const TokenLayout layout{schema.num_numerical(), preprocess.category_counts(), config.vae.d};
  log << "train-vae: " << data.rows() << " rows, " << layout.tokens() << " tokens, d = "
      << layout.d << '\n';

  auto result = train_vae(processed, layout, config.vae, config.seed, [&](const VaeEpoch& e) {
    if (e.epoch % 50 == 0) {
      log << "  epoch " << e.epoch << " recon " << e.recon << " kl " << e.kl << " beta " << e.beta
          << '\n';
    }
  });
  if (!log_csv.empty()) {
    auto out = open_out(log_csv);
    write_epoch_log(out, result.log);
  }
  nlohmann::json stats = {{"rows", data.rows()}, {"epochs", result.log.size()}};
  if (!result.log.empty()) {
    stats["final_recon"] = result.log.back().recon;
    stats["final_kl"] = result.log.back().kl;
    stats["final_beta"] = result.log.back().beta;
  }
  save_container(model_out, vae_container(result.model, preprocess, vae_config_json(config.vae), stats));
  save_container(latents_out, latents_container(result.latents, preprocess));
  log << "train-vae: wrote " << model_out << " and " << latents_out << '\n';
}

void cmd_train_diffusion(const RunConfig& config, const std::string& latents_path,
                         const std::string& model_out, const std::string& log_csv,
                         std::ostream& log) {
  require(latents_path, "--latents");
  require(model_out, "--out");
  const auto loaded = latents_from_container(load_container(latents_path));
  check_schema(config, loaded.preprocess.schema);
  log << "train-diffusion: " << loaded.latents.rows() << " latents of width "
      << loaded.latents.cols() << '\n';
  auto result = train_diffusion(loaded.latents, config.diffusion, config.seed,
                                [&](const DiffusionStep& s) {
                                  if (s.step % 500 == 0) {
                                    log << "  step " << s.step << " loss " << s.loss << '\n';
                                  }
                                });
  if (!log_csv.empty()) {
    auto out = open_out(log_csv);
    write_step_log(out, result.log);
  }
  nlohmann::json stats = {{"rows", loaded.latents.rows()}, {"steps", result.log.size()}};
  if (!result.log.empty()) stats["final_loss"] = result.log.back().loss;
  save_container(model_out, diffusion_container(result.model, loaded.preprocess,
                                                diffusion_config_json(config.diffusion), stats));
  log << "train-diffusion: wrote " << model_out << '\n';
}

void cmd_sample(const RunConfig& config, const ModelPaths& models, std::size_t n_rows,
                const std::string& out_csv, const std::string& manifest_out, std::ostream& log) {
  require(out_csv, "--out");
  const auto m = load_models(config, models);
  const auto rows = generate(m.vae.model, m.diffusion.model, m.vae.preprocess, n_rows,
                             config.sampler, config.seed);
  table::save_csv(out_csv, rows);
  if (!manifest_out.empty()) {
    const nlohmann::json manifest = {
        {"seed", config.seed},
        {"rows", n_rows},
        {"steps", config.sampler.steps},
        {"mode", to_string(config.sampler.mode)},
        {"rho", config.sampler.rho},
        {"categories",
         config.sampler.category_decode == CategoryDecode::Argmax ? "argmax" : "sample"},
        {"vae_crc32", container_crc32(models.vae)},
        {"diffusion_crc32", container_crc32(models.diffusion)}};
    auto out = open_out(manifest_out);
    out << manifest.dump(2) << '\n';
  }
  log << "sample: wrote " << n_rows << " rows to " << out_csv << '\n';
}

void cmd_impute(const RunConfig& config, const ModelPaths& models, const std::string& in_csv,
                const std::string& out_csv, const std::vector<std::string>& mask_cols,
                std::ostream& log) {
  require(in_csv, "--data");
  require(out_csv, "--out");
  const auto m = load_models(config, models);
  const auto& schema = m.vae.preprocess.schema;
  std::vector<std::size_t> forced;
  for (const auto& name : mask_cols) {
    const auto column = schema.find(name);
    if (!column) throw SchemaError("--mask-cols names unknown column '" + name + "'");
    forced.push_back(*column);
  }
  const auto input = table::load_csv(in_csv, schema);
  const auto filled = impute(input, m.vae.model, m.diffusion.model, m.vae.preprocess,
                             config.imputer, config.seed, forced);
  table::save_csv(out_csv, filled);
  log << "impute: wrote " << filled.rows() << " rows to " << out_csv << '\n';
}

void cmd_eval(const EvalPaths& paths, std::ostream& log) {
  require(paths.schema, "--schema");
  require(paths.real, "--real");
  require(paths.synth, "--synth");
  require(paths.out_json, "--out");
  const auto schema = table::TableSchema::load(paths.schema);
  const auto real = table::load_csv(paths.real, schema);
  const auto synth = table::load_csv(paths.synth, schema);
  const eval::EvalReport report{eval::column_density_report(real, synth),
                                eval::pair_correlation_report(real, synth)};
  auto json = eval::to_json(report);
  if (!paths.test.empty()) {
    const auto test = table::load_csv(paths.test, schema);
    const auto mle = eval::mle_lite(real, synth, test);
    json["mle"] = {{"task", mle.task}, {"real", mle.real}, {"synth", mle.synth}, {"gap", mle.gap()}};
  }
  {
    auto out = open_out(paths.out_json);
    out << json.dump(2) << '\n';
  }
  if (!paths.out_csv.empty()) {
    auto out = open_out(paths.out_csv);
    eval::write_report_csv(out, report);
  }
  log << "eval: column density error " << report.density.error_percent
      << "%, pair correlation error " << report.pairs.error_percent << "%\n";
}

}  // namespace tabforge::cli
