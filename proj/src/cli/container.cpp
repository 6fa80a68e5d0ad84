#include "tabforge/cli/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <zlib.h>

#include "tabforge/error.hpp"

namespace tabforge::cli {

namespace {

constexpr std::size_t kHeaderBytes = kMagic.size() + 8;
constexpr std::size_t kTrailerBytes = 4;

void put_le(std::string& out, std::uint64_t v, std::size_t bytes) {
  for (std::size_t i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::string_view in, std::size_t at, std::size_t bytes) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

nlohmann::json tensor_json(const nn::Tensor& t) {
  return nlohmann::json(std::vector<double>(t.data().begin(), t.data().end()));
}

nn::Tensor tensor_from_json(const nlohmann::json& j, std::size_t cols) {
  const auto values = j.get<std::vector<double>>();
  if (values.size() != cols) throw IntegrityError("normalizer length does not match width");
  return nn::Tensor(1, cols, values);
}

Block to_block(const std::string& name, const nn::Tensor& t) {
  Block b{name, t.rows(), t.cols(), {}};
  b.values.reserve(t.size());
  for (const double v : t.data()) b.values.push_back(static_cast<float>(v));
  return b;
}

void add_params(Container& c, const nn::ParamStore& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.blocks.push_back(to_block(params.name(i), params.value(i)));
  }
}

// Overwrites a freshly initialized store; the stored names and shapes must
// match it one for one.
void load_params(const Container& c, nn::ParamStore& params) {
  if (c.blocks.size() != params.size()) {
    throw IntegrityError("container holds " + std::to_string(c.blocks.size()) +
                         " parameter blocks, architecture needs " + std::to_string(params.size()));
  }
  for (const auto& b : c.blocks) {
    if (!params.contains(b.name)) throw IntegrityError("unexpected parameter block " + b.name);
    auto& value = params.value(b.name);
    if (value.rows() != b.rows || value.cols() != b.cols) {
      throw IntegrityError("parameter block " + b.name + " has shape " + std::to_string(b.rows) +
                           "x" + std::to_string(b.cols) + ", expected " + value.shape_string());
    }
    for (std::size_t k = 0; k < b.values.size(); ++k) value[k] = b.values[k];
  }
}

void expect_kind(const Container& c, const std::string& kind) {
  const auto found = c.metadata.value("kind", std::string());
  if (found != kind) {
    throw CompatibilityError("expected a " + kind + " container, found '" + found + "'");
  }
}

Container with_header(const std::string& kind, const table::PreprocessState& preprocess) {
  Container c;
  c.metadata["kind"] = kind;
  c.metadata["format_version"] = kFormatVersion;
  c.metadata["preprocess"] = preprocess.to_json();
  return c;
}

}  // namespace

const Block& Container::block(std::string_view name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw IntegrityError("container has no block " + std::string(name));
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large inputs in pieces.
  constexpr std::size_t kPiece = 1u << 30;
  for (std::size_t at = 0; at < bytes.size(); at += kPiece) {
    const auto n = std::min(kPiece, bytes.size() - at);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + at), static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

std::string encode_container(const Container& container) {
  auto meta = container.metadata;
  auto listing = nlohmann::json::array();
  for (const auto& b : container.blocks) {
    if (b.values.size() != b.rows * b.cols) {
      throw DimensionError("block " + b.name + " holds " + std::to_string(b.values.size()) +
                           " values for shape " + std::to_string(b.rows) + "x" +
                           std::to_string(b.cols));
    }
    listing.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  }
  meta["blocks"] = listing;
  const auto text = meta.dump();

  std::string out(kMagic);
  put_le(out, text.size(), 8);
  out += text;
  for (const auto& b : container.blocks) {
    for (const float v : b.values) put_le(out, std::bit_cast<std::uint32_t>(v), 4);
  }
  put_le(out, crc32_of(out), 4);
  return out;
}

Container decode_container(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    if (bytes.size() >= kMagic.size() && bytes.substr(0, 4) == kMagic.substr(0, 4)) {
      throw VersionError("unsupported container version '" +
                         std::string(bytes.substr(0, kMagic.size())) + "', expected " +
                         std::string(kMagic));
    }
    throw IntegrityError("not a model container (bad magic)");
  }
  if (bytes.size() < kHeaderBytes + kTrailerBytes) throw IntegrityError("container is truncated");
  const auto body = bytes.substr(0, bytes.size() - kTrailerBytes);
  const auto stored = static_cast<std::uint32_t>(get_le(bytes, body.size(), 4));
  if (crc32_of(body) != stored) throw IntegrityError("container checksum mismatch");

  const auto meta_len = get_le(bytes, kMagic.size(), 8);
  if (meta_len > body.size() - kHeaderBytes) throw IntegrityError("metadata length out of range");
  Container c;
  try {
    c.metadata = nlohmann::json::parse(body.substr(kHeaderBytes, meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("container metadata is not valid JSON: ") + e.what());
  }
  if (c.metadata.value("format_version", 0) != kFormatVersion) {
    throw VersionError("container format_version " + c.metadata.value("format_version", nlohmann::json()).dump() +
                       " is not supported, expected " + std::to_string(kFormatVersion));
  }

  std::size_t at = kHeaderBytes + meta_len;
  try {
    for (const auto& entry : c.metadata.at("blocks")) {
      Block b{entry.at("name").get<std::string>(), entry.at("rows").get<std::size_t>(),
              entry.at("cols").get<std::size_t>(), {}};
      const auto n = b.rows * b.cols;
      if (b.cols != 0 && n / b.cols != b.rows) throw IntegrityError("block shape overflows");
      if (n > (body.size() - at) / 4) throw IntegrityError("block " + b.name + " is truncated");
      b.values.resize(n);
      for (std::size_t k = 0; k < n; ++k, at += 4) {
        b.values[k] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, at, 4)));
      }
      c.blocks.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed block listing: ") + e.what());
  }
  if (at != body.size()) throw IntegrityError("container has trailing bytes");
  c.metadata.erase("blocks");
  return c;
}

void save_container(const std::string& path, const Container& container) {
  const auto bytes = encode_container(container);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path);
}

namespace {
std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

Container load_container(const std::string& path) {
  try {
    return decode_container(read_file(path));
  } catch (const IntegrityError& e) {
    throw IntegrityError(path + ": " + e.what());
  } catch (const VersionError& e) {
    throw VersionError(path + ": " + e.what());
  }
}

std::uint32_t container_crc32(const std::string& path) {
  const auto bytes = read_file(path);
  decode_container(bytes);
  return static_cast<std::uint32_t>(get_le(bytes, bytes.size() - kTrailerBytes, 4));
}

Container vae_container(const VaeModel& model, const table::PreprocessState& preprocess,
                        const nlohmann::json& config, const nlohmann::json& stats) {
  auto c = with_header("vae", preprocess);
  const auto& layout = model.arch.layout;
  c.metadata["arch"] = {{"num_numerical", layout.num_numerical},
                        {"category_counts", layout.category_counts},
                        {"d", layout.d},
                        {"hidden", model.arch.hidden},
                        {"layers", model.arch.layers}};
  c.metadata["config"] = config;
  c.metadata["stats"] = stats;
  add_params(c, model.params);
  return c;
}

Container diffusion_container(const DiffusionModel& model,
                              const table::PreprocessState& preprocess,
                              const nlohmann::json& config, const nlohmann::json& stats) {
  auto c = with_header("diffusion", preprocess);
  c.metadata["arch"] = {{"width", model.arch.width}, {"hidden", model.arch.hidden}};
  c.metadata["schedule"] = {{"sigma_min", model.schedule.sigma_min},
                            {"sigma_max", model.schedule.sigma_max}};
  // JSON doubles round-trip exactly, so the normalizer is kept at f64.
  c.metadata["normalizer"] = {{"mean", tensor_json(model.normalizer.mean)},
                              {"std", tensor_json(model.normalizer.std)}};
  c.metadata["config"] = config;
  c.metadata["stats"] = stats;
  add_params(c, model.params);
  return c;
}

Container latents_container(const nn::Tensor& latents, const table::PreprocessState& preprocess) {
  auto c = with_header("latents", preprocess);
  c.blocks.push_back(to_block("latents", latents));
  return c;
}

LoadedVae vae_from_container(const Container& c) {
  expect_kind(c, "vae");
  try {
    const auto& a = c.metadata.at("arch");
    VaeArchitecture arch;
    arch.layout.num_numerical = a.at("num_numerical").get<std::size_t>();
    arch.layout.category_counts = a.at("category_counts").get<std::vector<std::size_t>>();
    arch.layout.d = a.at("d").get<std::size_t>();
    arch.hidden = a.at("hidden").get<std::size_t>();
    arch.layers = a.at("layers").get<std::size_t>();
    LoadedVae out{VaeModel::create(arch, 0), table::PreprocessState::from_json(c.metadata.at("preprocess"))};
    load_params(c, out.model.params);
    if (out.preprocess.category_counts() != arch.layout.category_counts ||
        out.preprocess.schema.num_numerical() != arch.layout.num_numerical) {
      throw IntegrityError("VAE architecture disagrees with its preprocessing state");
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed VAE metadata: ") + e.what());
  }
}

LoadedDiffusion diffusion_from_container(const Container& c) {
  expect_kind(c, "diffusion");
  try {
    const auto& a = c.metadata.at("arch");
    DiffusionModel model;
    model.arch.width = a.at("width").get<std::size_t>();
    model.arch.hidden = a.at("hidden").get<std::size_t>();
    if (model.arch.width == 0 || model.arch.hidden == 0 || model.arch.hidden % 2 != 0) {
      throw IntegrityError("invalid denoiser architecture");
    }
    Rng rng(0);
    init_denoiser(model.params, model.arch, rng);
    load_params(c, model.params);
    const auto& s = c.metadata.at("schedule");
    model.schedule =
        NoiseSchedule::linear(s.at("sigma_min").get<double>(), s.at("sigma_max").get<double>());
    const auto& n = c.metadata.at("normalizer");
    model.normalizer.mean = tensor_from_json(n.at("mean"), model.arch.width);
    model.normalizer.std = tensor_from_json(n.at("std"), model.arch.width);
    return {std::move(model), table::PreprocessState::from_json(c.metadata.at("preprocess"))};
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed diffusion metadata: ") + e.what());
  }
}

LoadedLatents latents_from_container(const Container& c) {
  expect_kind(c, "latents");
  const auto& b = c.block("latents");
  nn::Tensor latents(b.rows, b.cols);
  for (std::size_t k = 0; k < b.values.size(); ++k) latents[k] = b.values[k];
  try {
    return {std::move(latents), table::PreprocessState::from_json(c.metadata.at("preprocess"))};
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed latent metadata: ") + e.what());
  }
}

}  // namespace tabforge::cli
