#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabforge/diffusion.hpp"
#include "tabforge/nn/tensor.hpp"
#include "tabforge/table/preprocess.hpp"
#include "tabforge/vae.hpp"

namespace tabforge::cli {

// Byte layout:
//   "TSYN1"                      magic, 5 bytes
//   u64 LE                       metadata length L
//   L bytes                      UTF-8 JSON metadata
//   f32 LE arrays                one per metadata "blocks" entry, in order
//   u32 LE                       CRC-32 of every preceding byte
inline constexpr std::string_view kMagic = "TSYN1";
inline constexpr int kFormatVersion = 1;

struct Block {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;
};

struct Container {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<Block> blocks;

  const Block& block(std::string_view name) const;
};

// Stores the block names and shapes in metadata["blocks"].
std::string encode_container(const Container& container);
// IntegrityError on a bad checksum, truncation or shape disagreement;
// VersionError on a "TSYN" magic with another version digit.
Container decode_container(std::string_view bytes);

void save_container(const std::string& path, const Container& container);
Container load_container(const std::string& path);

std::uint32_t crc32_of(std::string_view bytes);
// The validated trailer of a container file. (A CRC over the whole file would
// be the same constant for every container.)
std::uint32_t container_crc32(const std::string& path);

// Model and latent payloads. Parameters pass through f32, so a loaded model
// equals the saved one rounded to float.
Container vae_container(const VaeModel& model, const table::PreprocessState& preprocess,
                        const nlohmann::json& config, const nlohmann::json& stats);
Container diffusion_container(const DiffusionModel& model,
                              const table::PreprocessState& preprocess,
                              const nlohmann::json& config, const nlohmann::json& stats);
Container latents_container(const nn::Tensor& latents, const table::PreprocessState& preprocess);

struct LoadedVae {
  VaeModel model;
  table::PreprocessState preprocess;
};

struct LoadedDiffusion {
  DiffusionModel model;
  table::PreprocessState preprocess;
};

struct LoadedLatents {
  nn::Tensor latents;
  table::PreprocessState preprocess;
};

// Each throws CompatibilityError when the container holds another kind.
LoadedVae vae_from_container(const Container& container);
LoadedDiffusion diffusion_from_container(const Container& container);
LoadedLatents latents_from_container(const Container& container);

}  // namespace tabforge::cli
