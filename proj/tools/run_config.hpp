#pragma once

// Every setting of a CLI run, readable from a sectioned INI file
// ("section.key = value") with command-line overrides on top.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ivs/dataset.hpp"
#include "ivs/pipeline.hpp"
#include "ivs/simulate.hpp"

namespace ivs::cli {

struct RunConfig {
  std::uint64_t seed = 1;

  SynthConfig synth;
  double split_ratio = kDefaultSplitRatio;
  std::string split_date;  // overrides split_ratio when set

  FitConfig fit;
  std::vector<std::string> models;  // evaluate/predict; empty = all seven

  SimulationConfig sim;
  std::string sim_features = "sam";
  std::string error_mode = "auto";  // auto picks by feature method
  std::string error_dist = "gaussian";

  RunConfig();

  /// Sets one "section.key"; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void load(const std::filesystem::path& ini);
  /// Canonical INI text with every key, in table order.
  std::string to_ini() const;
  void validate() const;
};

std::vector<std::string> split_list(const std::string& s);

}  // namespace ivs::cli
