#include "run_config.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <functional>
#include <sstream>

#include "ivs/errors.hpp"
#include "ivs/evaluation.hpp"
#include "ivs/nn/serialize.hpp"

namespace ivs::cli {

namespace {

template <class T>
T parse_value(const std::string& key, const std::string& s) {
  if constexpr (std::is_same_v<T, std::string>) {
    return s;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + s + "'");
  } else if constexpr (std::is_floating_point_v<T>) {
    try {
      return nn::parse_double(s);
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a number, got '" + s + "'");
    }
  } else {
    T v{};
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
    return v;
  }
}

template <class T>
std::string show(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    return nn::format_double(v);
  } else {
    return std::to_string(v);
  }
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Access>
Entry field(std::string key, Access access) {
  return {key,
          [key, access](RunConfig& c, const std::string& s) { access(c) = parse_value<T>(key, s); },
          [access](const RunConfig& c) { return show<T>(access(const_cast<RunConfig&>(c))); }};
}

#define IVS_FIELD(T, key, expr) field<T>(key, [](RunConfig& c) -> T& { return expr; })

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      IVS_FIELD(std::uint64_t, "run.seed", c.seed),

      IVS_FIELD(int, "data.days", c.synth.days),
      IVS_FIELD(std::string, "data.start_date", c.synth.start_date),
      IVS_FIELD(double, "data.ar_coef", c.synth.ar_coef),
      IVS_FIELD(double, "data.noise_scale", c.synth.noise_scale),
      IVS_FIELD(double, "data.iv_noise", c.synth.iv_noise),
      IVS_FIELD(double, "data.rate", c.synth.rate),
      IVS_FIELD(double, "data.div_yield", c.synth.div_yield),
      IVS_FIELD(double, "data.sigma0_lo", c.synth.sigma0.lo),
      IVS_FIELD(double, "data.sigma0_hi", c.synth.sigma0.hi),
      IVS_FIELD(double, "data.sigma_inf_lo", c.synth.sigma_inf.lo),
      IVS_FIELD(double, "data.sigma_inf_hi", c.synth.sigma_inf.hi),
      IVS_FIELD(double, "data.split_ratio", c.split_ratio),
      IVS_FIELD(std::string, "data.split_date", c.split_date),

      IVS_FIELD(int, "features.pca_components", c.fit.pca_components),

      IVS_FIELD(int, "vae.latent_dim", c.fit.vae.latent_dim),
      IVS_FIELD(double, "vae.beta", c.fit.vae.beta),
      IVS_FIELD(int, "vae.hidden", c.fit.vae.hidden),
      IVS_FIELD(int, "vae.depth", c.fit.vae.depth),
      IVS_FIELD(int, "vae.epochs", c.fit.vae.train.epochs),
      IVS_FIELD(int, "vae.batch_size", c.fit.vae.train.batch_size),
      IVS_FIELD(double, "vae.learning_rate", c.fit.vae.train.learning_rate),

      IVS_FIELD(int, "predictor.epochs", c.fit.predictor.train.epochs),
      IVS_FIELD(int, "predictor.batch_size", c.fit.predictor.train.batch_size),
      IVS_FIELD(double, "predictor.learning_rate", c.fit.predictor.train.learning_rate),
      IVS_FIELD(int, "predictor.hidden", c.fit.predictor.hidden),
      IVS_FIELD(double, "predictor.floor", c.fit.predictor.floor),
      IVS_FIELD(bool, "predictor.residual", c.fit.predictor.residual),
      IVS_FIELD(double, "predictor.validation_fraction", c.fit.predictor.validation_fraction),

      IVS_FIELD(int, "constructor.epochs", c.fit.constructor.train.epochs),
      IVS_FIELD(int, "constructor.batch_size", c.fit.constructor.train.batch_size),
      IVS_FIELD(double, "constructor.learning_rate", c.fit.constructor.train.learning_rate),
      IVS_FIELD(int, "constructor.hidden", c.fit.constructor.hidden),
      IVS_FIELD(int, "constructor.depth", c.fit.constructor.depth),
      IVS_FIELD(double, "constructor.lambda", c.fit.constructor.lambda),
      IVS_FIELD(int, "constructor.penalty_days", c.fit.constructor.penalty_days),
      IVS_FIELD(double, "constructor.fd_step", c.fit.constructor.fd_step),
      IVS_FIELD(int, "constructor.m_parts", c.fit.constructor.grids.m_parts),
      IVS_FIELD(int, "constructor.tau_parts", c.fit.constructor.grids.tau_parts),
      IVS_FIELD(double, "constructor.tau_max", c.fit.constructor.grids.tau_max),

      {"evaluate.models",
       [](RunConfig& c, const std::string& s) { c.models = split_list(s); },
       [](const RunConfig& c) {
         std::string s;
         for (const auto& m : c.models) s += (s.empty() ? "" : ",") + m;
         return s;
       }},

      IVS_FIELD(std::string, "simulate.features", c.sim_features),
      IVS_FIELD(int, "simulate.paths", c.sim.n_paths),
      IVS_FIELD(int, "simulate.horizon", c.sim.horizon),
      IVS_FIELD(std::string, "simulate.error_mode", c.error_mode),
      IVS_FIELD(std::string, "simulate.error_dist", c.error_dist),
      IVS_FIELD(bool, "simulate.scan", c.sim.scan),
  };
  return table;
}

#undef IVS_FIELD

}  // namespace

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

RunConfig::RunConfig() { models = all_model_tags(); }

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (e.key == key) {
      e.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::load(const std::filesystem::path& ini) {
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(ini.string());
  } catch (const CLI::Error& e) {
    throw ConfigError("cannot read config " + ini.string() + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    std::string value;
    for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
    set(item.fullname(), value);
  }
}

std::string RunConfig::to_ini() const {
  std::string out, section;
  for (const auto& e : entries()) {
    const auto dot = e.key.find('.');
    const std::string sec = e.key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "" : "\n") + ("[" + sec + "]\n");
      section = sec;
    }
    out += e.key.substr(dot + 1) + " = " + e.get(*this) + "\n";
  }
  return out;
}

void RunConfig::validate() const {
  synth.validate();
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("data.split_ratio must lie in (0, 1)");
  fit.validate();
  for (const auto& m : models) parse_model_tag(m);
  sim.validate();
  feature_method_from_string(sim_features);
  if (error_mode != "auto") error_mode_from_string(error_mode);
  error_distribution_from_string(error_dist);
}

}  // namespace ivs::cli
