#pragma once

#include <cstdint>
#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

#include "tabforge/cli/config.hpp"

namespace tabforge::cli {

/// Process exit codes, one per error family.
enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,         // ConfigError, bad command line
  kExitSchema = 3,         // SchemaError, CompatibilityError
  kExitParse = 4,          // ParseError (CSV, schema JSON)
  kExitVersion = 5,        // VersionError
  kExitIntegrity = 6,      // IntegrityError
  kExitNumeric = 7,        // NumericError, DomainError, FitError
  kExitInput = 8,          // InputError, DimensionError, StateError
};

int exit_code_for(const std::exception& e);

// Every command writes progress lines to `log` and nothing to stdout.

// Fits preprocessing on config.data_path, trains the VAE and writes the model
// container plus the training-row latents. Epoch log CSV when log_csv is set.
void cmd_train_vae(const RunConfig& config, const std::string& model_out,
                   const std::string& latents_out, const std::string& log_csv, std::ostream& log);

// Trains the denoiser on a latents file written by cmd_train_vae.
void cmd_train_diffusion(const RunConfig& config, const std::string& latents_path,
                         const std::string& model_out, const std::string& log_csv,
                         std::ostream& log);

struct ModelPaths {
  std::string vae;
  std::string diffusion;
};

// Writes n_rows synthetic rows. When manifest_out is set, also writes a JSON
// record of the seed, sampler settings and model checksums.
void cmd_sample(const RunConfig& config, const ModelPaths& models, std::size_t n_rows,
                const std::string& out_csv, const std::string& manifest_out, std::ostream& log);

// Fills empty cells of in_csv; every column named in mask_cols is imputed in
// every row.
void cmd_impute(const RunConfig& config, const ModelPaths& models, const std::string& in_csv,
                const std::string& out_csv, const std::vector<std::string>& mask_cols,
                std::ostream& log);

struct EvalPaths {
  std::string schema;
  std::string real;
  std::string synth;
  std::string test;      // optional held-out real rows for the MLE score
  std::string out_json;
  std::string out_csv;   // optional
};

void cmd_eval(const EvalPaths& paths, std::ostream& log);

}  // namespace tabforge::cli
