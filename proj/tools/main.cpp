#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tabforge/cli/commands.hpp"
#include "tabforge/cli/config.hpp"
#include "tabforge/error.hpp"
#include "tabforge/sampler.hpp"

namespace {

using tabforge::cli::RunConfig;

// Options shared by the model commands. Flags override the config file.
struct Common {
  std::string config;
  std::string schema;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::string> mode;

  void attach(CLI::App& app, bool with_data) {
    app.add_option("--config", config, "TOML-style run configuration");
    app.add_option("--schema", schema, "Table schema JSON");
    if (with_data) app.add_option("--data", data, "Input CSV");
    app.add_option("--out", out, "Output path")->required();
    app.add_option("--seed", seed, "Random seed");
  }

  RunConfig load() const {
    RunConfig c = config.empty() ? RunConfig{} : tabforge::cli::load_config(config);
    if (!schema.empty()) c.schema_path = schema;
    if (!data.empty()) c.data_path = data;
    if (seed) c.seed = *seed;
    return c;
  }
};

tabforge::SamplerMode mode_of(const std::string& text) {
  try {
    return tabforge::parse_sampler_mode(text);
  } catch (const tabforge::ConfigError&) {
    throw tabforge::ConfigError("--mode must be 'ode' or 'sde', got '" + text + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent diffusion synthesis and imputation for mixed-type tables"};
  app.require_subcommand(1);

  Common train_vae_opts;
  std::string vae_latents;
  std::string vae_log;
  auto* train_vae = app.add_subcommand("train-vae", "Fit preprocessing and train the VAE");
  train_vae_opts.attach(*train_vae, true);
  train_vae->add_option("--latents", vae_latents, "Latent dataset output")->required();
  train_vae->add_option("--log", vae_log, "Epoch log CSV");

  Common train_diff_opts;
  std::string diff_latents;
  std::string diff_log;
  auto* train_diff =
      app.add_subcommand("train-diffusion", "Train the latent denoiser on a latent dataset");
  train_diff_opts.attach(*train_diff, false);
  train_diff->add_option("--latents", diff_latents, "Latent dataset from train-vae")->required();
  train_diff->add_option("--steps", train_diff_opts.steps, "Training steps");
  train_diff->add_option("--log", diff_log, "Step log CSV");

  Common sample_opts;
  tabforge::cli::ModelPaths sample_models;
  std::size_t rows = 0;
  std::string manifest;
  auto* sample = app.add_subcommand("sample", "Generate synthetic rows");
  sample_opts.attach(*sample, false);
  sample->add_option("--vae", sample_models.vae, "VAE model")->required();
  sample->add_option("--diffusion", sample_models.diffusion, "Diffusion model")->required();
  sample->add_option("--rows", rows, "Rows to generate")->required();
  sample->add_option("--steps", sample_opts.steps, "Reverse-process steps");
  sample->add_option("--mode", sample_opts.mode, "ode or sde");
  sample->add_option("--manifest", manifest, "Sampling manifest JSON");

  Common impute_opts;
  tabforge::cli::ModelPaths impute_models;
  std::vector<std::string> mask_cols;
  auto* impute = app.add_subcommand("impute", "Fill missing cells of a CSV");
  impute_opts.attach(*impute, true);
  impute->add_option("--vae", impute_models.vae, "VAE model")->required();
  impute->add_option("--diffusion", impute_models.diffusion, "Diffusion model")->required();
  impute->add_option("--mask-cols", mask_cols, "Columns to impute in every row")->delimiter(',');
  impute->add_option("--steps", impute_opts.steps, "Reverse-process steps");
  impute->add_option("--mode", impute_opts.mode, "ode or sde");

  tabforge::cli::EvalPaths eval_paths;
  auto* eval = app.add_subcommand("eval", "Score synthetic rows against real rows");
  eval->add_option("--schema", eval_paths.schema, "Table schema JSON")->required();
  eval->add_option("--real", eval_paths.real, "Real CSV")->required();
  eval->add_option("--synth", eval_paths.synth, "Synthetic CSV")->required();
  eval->add_option("--test", eval_paths.test, "Held-out real CSV for the MLE score");
  eval->add_option("--out", eval_paths.out_json, "JSON report")->required();
  eval->add_option("--csv", eval_paths.out_csv, "CSV report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return tabforge::cli::kExitConfig;
  }

  try {
    if (*train_vae) {
      const auto config = train_vae_opts.load();
      tabforge::cli::cmd_train_vae(config, train_vae_opts.out, vae_latents, vae_log, std::cerr);
    } else if (*train_diff) {
      auto config = train_diff_opts.load();
      if (train_diff_opts.steps) config.diffusion.steps = *train_diff_opts.steps;
      tabforge::cli::cmd_train_diffusion(config, diff_latents, train_diff_opts.out, diff_log,
                                         std::cerr);
    } else if (*sample) {
      auto config = sample_opts.load();
      if (sample_opts.steps) config.sampler.steps = *sample_opts.steps;
      if (sample_opts.mode) config.sampler.mode = mode_of(*sample_opts.mode);
      tabforge::cli::cmd_sample(config, sample_models, rows, sample_opts.out, manifest, std::cerr);
    } else if (*impute) {
      auto config = impute_opts.load();
      if (impute_opts.steps) config.imputer.steps = *impute_opts.steps;
      if (impute_opts.mode) config.imputer.mode = mode_of(*impute_opts.mode);
      tabforge::cli::cmd_impute(config, impute_models, config.data_path, impute_opts.out,
                                mask_cols, std::cerr);
    } else if (*eval) {
      tabforge::cli::cmd_eval(eval_paths, std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return tabforge::cli::exit_code_for(e);
  }
  return tabforge::cli::kExitOk;
}
