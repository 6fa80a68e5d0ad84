#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "tabforge/diffusion.hpp"
#include "tabforge/imputer.hpp"
#include "tabforge/sampler.hpp"
#include "tabforge/vae.hpp"

namespace tabforge::cli {

/// Everything a command needs besides its file arguments. Every key has a
/// default, so a config file may be empty.
struct RunConfig {
  std::string schema_path;
  std::string data_path;
  std::uint64_t seed = 0;
  VaeConfig vae{};
  DiffusionConfig diffusion{};
  SamplerConfig sampler{};
  ImputeConfig imputer{};
};

// Flat "key = value" lines under [data], [vae], [diffusion], [sampler] and
// [imputer] sections; "seed" may appear before any section. '#' starts a
// comment; strings may be double-quoted. Relative paths are resolved
// against `base_dir`. Unknown keys and bad values are ConfigErrors that
// name the line.
RunConfig parse_config(std::istream& in, const std::string& base_dir = "");
RunConfig load_config(const std::string& path);

// Inverse of parse_config for the hyperparameter sections (paths excluded).
std::string format_config(const RunConfig& config);

nlohmann::json vae_config_json(const VaeConfig& c);
nlohmann::json diffusion_config_json(const DiffusionConfig& c);

}  // namespace tabforge::cli
