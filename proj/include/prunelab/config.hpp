#pragma once

#include "prunelab/model.hpp"
#include "prunelab/synthdata.hpp"
#include "prunelab/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace prunelab {

struct ModelConfig {
  std::size_t m = 64;
  double sigma0 = 0.01;
  std::string activation = "poly";  // poly or relu
  int q = 3;

  Activation make_activation() const;
};

struct PruningConfig {
  double p = 1.0;  // retention probability
  bool reject_signal = false;
  std::uint64_t max_attempts = 100'000'000;  // p = 0.05, K m = 256 needs ~5e5 on average
};

struct SweepConfig {
  std::vector<double> p_values;
  std::vector<double> sigma_n_values;
  std::vector<std::uint64_t> seeds;
  /// Presets built on pruned fraction record 1 - p in the metadata.
  bool pruned_fraction_axis = false;
};

struct DiagnosticsConfig {
  bool enabled = true;
  std::size_t n_mc = 2000;
  double C = 1.0;
  double alpha_multiplier = 2.0;
  std::size_t noise_samples = 2000;
  double grad_ceiling = 100.0;
};

struct ExperimentConfig {
  std::string preset = "custom";
  DataConfig data;
  std::size_t n_eval = 1000;
  ModelConfig model;
  PruningConfig pruning;
  TrainConfig train;
  SweepConfig sweep;
  DiagnosticsConfig diagnostics;

  void validate() const;
};

/// INI text with sections data, model, pruning, train, sweep, diagnostics.
/// Unknown sections or keys throw ConfigError.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<string>");
ExperimentConfig load_config(const std::filesystem::path& path);
std::string to_ini(const ExperimentConfig& cfg);

/// "a:b:step" (inclusive) or a comma-separated list.
std::vector<double> parse_real_list(const std::string& text);
/// "a:b" (inclusive) or a comma-separated list.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace prunelab
