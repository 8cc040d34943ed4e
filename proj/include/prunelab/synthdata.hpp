#pragma once

#include "prunelab/common.hpp"
#include "prunelab/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace prunelab {

/// Parameters of the K-class sparse-signal-plus-noise distribution.
/// Class k's signal is mu * e_k (labels are 0-based internally).
struct DataConfig {
  std::size_t K = 2;
  std::size_t d = 400;
  std::size_t n = 100;
  double mu = 1.0;
  double sigma_n = 0.5;
  std::uint64_t seed = 0;

  /// Throws ConfigError on K == 0, K > d, n == 0, mu <= 0 or sigma_n < 0.
  void validate() const;
};

enum class Patch : std::uint8_t { first = 1, second = 2 };

/// One materialized two-patch input.
struct Sample {
  Eigen::VectorXd x1;
  Eigen::VectorXd x2;
  std::size_t y = 0;
  Patch signal_patch = Patch::first;

  const Eigen::VectorXd& noise_patch() const { return signal_patch == Patch::first ? x2 : x1; }
};

/// Immutable labeled sample set. The noise draws are stored as an n x d matrix
/// (row i is xi_i); the signal patch is implicit (mu * e_{y_i}).
class Dataset {
 public:
  Dataset(DataConfig config, std::vector<std::size_t> labels, std::vector<Patch> signal_patches, RowMatrix noise);

  const DataConfig& config() const { return config_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return config_.d; }
  std::size_t classes() const { return config_.K; }
  double mu() const { return config_.mu; }

  std::span<const std::size_t> labels() const { return labels_; }
  std::size_t label(std::size_t i) const { return labels_[i]; }
  Patch signal_patch(std::size_t i) const { return signal_patches_[i]; }
  const RowMatrix& noise() const { return noise_; }

  Sample sample(std::size_t i) const;
  std::vector<std::size_t> class_counts() const;

 private:
  DataConfig config_;
  std::vector<std::size_t> labels_;
  std::vector<Patch> signal_patches_;
  RowMatrix noise_;
};

/// Draws `count` samples from `rng`. Per sample: label, then d noise
/// coordinates, then the patch-order coin.
Dataset draw_dataset(const DataConfig& cfg, std::size_t count, Rng& rng);

/// Training set of cfg.n samples from the `data` stream of cfg.seed.
Dataset generate_dataset(const DataConfig& cfg);

/// n_eval fresh samples from the `eval` stream of cfg.seed.
Dataset fresh_eval_set(const DataConfig& cfg, std::size_t n_eval);

/// CSV dump: index, y, signal_patch (1 or 2), then x1 coordinates, then x2 coordinates.
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);

}  // namespace prunelab
