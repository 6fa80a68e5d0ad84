#include "tabforge/cli/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tabforge/error.hpp"
#include "tabforge/table/csv.hpp"

namespace tabforge::cli {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

// Drops a trailing '#' comment that is not inside double quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

class Field {
 public:
  Field(std::string text, std::size_t line) : text_(std::move(text)), line_(line) {}

  std::string str() const {
    if (text_.size() >= 2 && text_.front() == '"' && text_.back() == '"') {
      return text_.substr(1, text_.size() - 2);
    }
    return text_;
  }

  double real() const {
    double v = 0.0;
    const auto s = str();
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v)) fail("a number");
    return v;
  }

  double positive() const {
    const double v = real();
    if (!(v > 0.0)) fail("a positive number");
    return v;
  }

  std::uint64_t count(bool allow_zero = false) const {
    std::uint64_t v = 0;
    const auto s = str();
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || (!allow_zero && v == 0)) {
      fail(allow_zero ? "a non-negative integer" : "a positive integer");
    }
    return v;
  }

  [[noreturn]] void fail(const std::string& expected) const {
    throw ConfigError("config line " + std::to_string(line_) + ": expected " + expected +
                      ", got '" + text_ + "'");
  }

 private:
  std::string text_;
  std::size_t line_;
};

using Setter = std::function<void(RunConfig&, const Field&)>;

std::string resolve(const std::string& base, const std::string& path) {
  if (path.empty() || base.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base) / path).lexically_normal().string();
}

LatentSource parse_latent_source(const Field& f) {
  const auto s = f.str();
  if (s == "mean") return LatentSource::Mean;
  if (s == "sample") return LatentSource::Sample;
  f.fail("'mean' or 'sample'");
}

CategoryDecode parse_category_decode(const Field& f) {
  const auto s = f.str();
  if (s == "argmax") return CategoryDecode::Argmax;
  if (s == "sample") return CategoryDecode::Sample;
  f.fail("'argmax' or 'sample'");
}

SamplerMode parse_mode(const Field& f) {
  const auto s = f.str();
  if (s == "ode") return SamplerMode::Ode;
  if (s == "sde") return SamplerMode::Sde;
  f.fail("'ode' or 'sde'");
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const Field& f) { c.seed = f.count(true); }},
      {"data.schema", [](RunConfig& c, const Field& f) { c.schema_path = f.str(); }},
      {"data.train", [](RunConfig& c, const Field& f) { c.data_path = f.str(); }},
      {"vae.d", [](RunConfig& c, const Field& f) { c.vae.d = f.count(); }},
      {"vae.hidden", [](RunConfig& c, const Field& f) { c.vae.hidden = f.count(); }},
      {"vae.layers", [](RunConfig& c, const Field& f) { c.vae.layers = f.count(); }},
      {"vae.epochs", [](RunConfig& c, const Field& f) { c.vae.epochs = f.count(); }},
      {"vae.batch", [](RunConfig& c, const Field& f) { c.vae.batch_size = f.count(); }},
      {"vae.lr", [](RunConfig& c, const Field& f) { c.vae.adam.lr = f.positive(); }},
      {"vae.beta_max", [](RunConfig& c, const Field& f) { c.vae.beta_max = f.positive(); }},
      {"vae.beta_min", [](RunConfig& c, const Field& f) { c.vae.beta_min = f.positive(); }},
      {"vae.lambda", [](RunConfig& c, const Field& f) { c.vae.beta_decay = f.positive(); }},
      {"vae.patience", [](RunConfig& c, const Field& f) { c.vae.patience = f.count(); }},
      {"vae.latent", [](RunConfig& c, const Field& f) { c.vae.latent_source = parse_latent_source(f); }},
      {"diffusion.hidden", [](RunConfig& c, const Field& f) { c.diffusion.hidden = f.count(); }},
      {"diffusion.steps", [](RunConfig& c, const Field& f) { c.diffusion.steps = f.count(); }},
      {"diffusion.batch", [](RunConfig& c, const Field& f) { c.diffusion.batch_size = f.count(); }},
      {"diffusion.lr", [](RunConfig& c, const Field& f) { c.diffusion.adam.lr = f.positive(); }},
      {"diffusion.sigma_min",
       [](RunConfig& c, const Field& f) { c.diffusion.times.sigma_min = f.positive(); }},
      {"diffusion.sigma_max",
       [](RunConfig& c, const Field& f) { c.diffusion.times.sigma_max = f.positive(); }},
      {"diffusion.p_mean", [](RunConfig& c, const Field& f) { c.diffusion.times.p_mean = f.real(); }},
      {"diffusion.p_std", [](RunConfig& c, const Field& f) { c.diffusion.times.p_std = f.positive(); }},
      {"sampler.steps", [](RunConfig& c, const Field& f) { c.sampler.steps = f.count(); }},
      {"sampler.mode", [](RunConfig& c, const Field& f) { c.sampler.mode = parse_mode(f); }},
      {"sampler.rho", [](RunConfig& c, const Field& f) { c.sampler.rho = f.positive(); }},
      {"sampler.categories",
       [](RunConfig& c, const Field& f) { c.sampler.category_decode = parse_category_decode(f); }},
      {"imputer.resample", [](RunConfig& c, const Field& f) { c.imputer.resample = f.count(); }},
      {"imputer.steps", [](RunConfig& c, const Field& f) { c.imputer.steps = f.count(); }},
      {"imputer.mode", [](RunConfig& c, const Field& f) { c.imputer.mode = parse_mode(f); }},
      {"imputer.rho", [](RunConfig& c, const Field& f) { c.imputer.rho = f.positive(); }},
  };
  return table;
}

void validate(const RunConfig& c) {
  if (c.vae.beta_min > c.vae.beta_max) throw ConfigError("vae.beta_min exceeds vae.beta_max");
  if (c.vae.beta_decay >= 1.0) throw ConfigError("vae.lambda must be below 1");
  if (c.diffusion.times.sigma_min >= c.diffusion.times.sigma_max) {
    throw ConfigError("diffusion.sigma_min must be below diffusion.sigma_max");
  }
  if (c.diffusion.hidden % 2 != 0) throw ConfigError("diffusion.hidden must be even");
}

}  // namespace

RunConfig parse_config(std::istream& in, const std::string& base_dir) {
  RunConfig config;
  std::string section;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      }
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section != "data" && section != "vae" && section != "diffusion" && section != "sampler" &&
          section != "imputer") {
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown section [" +
                          section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    const auto full = section.empty() ? key : section + "." + key;
    const auto it = setters().find(full);
    if (it == setters().end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + full + "'");
    }
    it->second(config, Field(value, line_no));
  }
  config.schema_path = resolve(base_dir, config.schema_path);
  config.data_path = resolve(base_dir, config.data_path);
  validate(config);
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in, std::filesystem::path(path).parent_path().string());
}

std::string format_config(const RunConfig& c) {
  const auto num = [](double v) { return table::format_number(v); };
  std::ostringstream out;
  out << "seed = " << c.seed << "\n\n[vae]\n"
      << "d = " << c.vae.d << "\nhidden = " << c.vae.hidden << "\nlayers = " << c.vae.layers
      << "\nepochs = " << c.vae.epochs << "\nbatch = " << c.vae.batch_size
      << "\nlr = " << num(c.vae.adam.lr) << "\nbeta_max = " << num(c.vae.beta_max)
      << "\nbeta_min = " << num(c.vae.beta_min) << "\nlambda = " << num(c.vae.beta_decay)
      << "\npatience = " << c.vae.patience
      << "\nlatent = " << (c.vae.latent_source == LatentSource::Mean ? "mean" : "sample")
      << "\n\n[diffusion]\n"
      << "hidden = " << c.diffusion.hidden << "\nsteps = " << c.diffusion.steps
      << "\nbatch = " << c.diffusion.batch_size << "\nlr = " << num(c.diffusion.adam.lr)
      << "\nsigma_min = " << num(c.diffusion.times.sigma_min)
      << "\nsigma_max = " << num(c.diffusion.times.sigma_max)
      << "\np_mean = " << num(c.diffusion.times.p_mean)
      << "\np_std = " << num(c.diffusion.times.p_std) << "\n\n[sampler]\n"
      << "steps = " << c.sampler.steps << "\nmode = " << to_string(c.sampler.mode)
      << "\nrho = " << num(c.sampler.rho) << "\ncategories = "
      << (c.sampler.category_decode == CategoryDecode::Argmax ? "argmax" : "sample")
      << "\n\n[imputer]\n"
      << "resample = " << c.imputer.resample << "\nsteps = " << c.imputer.steps
      << "\nmode = " << to_string(c.imputer.mode) << "\nrho = " << num(c.imputer.rho) << '\n';
  return out.str();
}

nlohmann::json vae_config_json(const VaeConfig& c) {
  return {{"d", c.d},
          {"hidden", c.hidden},
          {"layers", c.layers},
          {"epochs", c.epochs},
          {"batch", c.batch_size},
          {"lr", c.adam.lr},
          {"beta_max", c.beta_max},
          {"beta_min", c.beta_min},
          {"lambda", c.beta_decay},
          {"patience", c.patience},
          {"latent", c.latent_source == LatentSource::Mean ? "mean" : "sample"}};
}

nlohmann::json diffusion_config_json(const DiffusionConfig& c) {
  return {{"hidden", c.hidden},
          {"steps", c.steps},
          {"batch", c.batch_size},
          {"lr", c.adam.lr},
          {"sigma_min", c.times.sigma_min},
          {"sigma_max", c.times.sigma_max},
          {"p_mean", c.times.p_mean},
          {"p_std", c.times.p_std}};
}

}  // namespace tabforge::cli
