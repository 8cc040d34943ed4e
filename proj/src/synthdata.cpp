#include "prunelab/synthdata.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <utility>

namespace prunelab {

void DataConfig::validate() const {
  if (K == 0) throw ConfigError("data: K must be positive");
  if (d == 0) throw ConfigError("data: d must be positive");
  if (K > d) throw ConfigError("data: K must not exceed d (signal e_K must exist)");
  if (n == 0) throw ConfigError("data: n must be at least 1");
  if (!(mu > 0.0)) throw ConfigError("data: mu must be positive");
  if (!(sigma_n >= 0.0)) throw ConfigError("data: sigma_n must be non-negative");
}

Dataset::Dataset(DataConfig config, std::vector<std::size_t> labels, std::vector<Patch> signal_patches,
                 RowMatrix noise)
    : config_(std::move(config)),
      labels_(std::move(labels)),
      signal_patches_(std::move(signal_patches)),
      noise_(std::move(noise)) {
  if (signal_patches_.size() != labels_.size() || static_cast<std::size_t>(noise_.rows()) != labels_.size() ||
      static_cast<std::size_t>(noise_.cols()) != config_.d) {
    throw ConfigError("dataset: inconsistent sample arrays");
  }
  for (std::size_t y : labels_) {
    if (y >= config_.K) throw ConfigError("dataset: label out of range");
  }
}

Sample Dataset::sample(std::size_t i) const {
  Sample s;
  s.y = labels_[i];
  s.signal_patch = signal_patches_[i];
  Eigen::VectorXd signal = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(config_.d));
  signal[static_cast<Eigen::Index>(s.y)] = config_.mu;
  Eigen::VectorXd noise = noise_.row(static_cast<Eigen::Index>(i)).transpose();
  if (s.signal_patch == Patch::first) {
    s.x1 = std::move(signal);
    s.x2 = std::move(noise);
  } else {
    s.x1 = std::move(noise);
    s.x2 = std::move(signal);
  }
  return s;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(config_.K, 0);
  for (std::size_t y : labels_) ++counts[y];
  return counts;
}

Dataset draw_dataset(const DataConfig& cfg, std::size_t count, Rng& rng) {
  cfg.validate();
  if (count == 0) throw ConfigError("data: sample count must be at least 1");

  std::uniform_int_distribution<std::size_t> label_dist(0, cfg.K - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  std::vector<std::size_t> labels(count);
  std::vector<Patch> patches(count);
  RowMatrix noise(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(cfg.d));
  for (std::size_t i = 0; i < count; ++i) {
    labels[i] = label_dist(rng);
    for (std::size_t k = 0; k < cfg.d; ++k) {
      // Draw even when sigma_n == 0 so the stream position does not depend on it.
      const double z = gauss(rng);
      noise(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = cfg.sigma_n == 0.0 ? 0.0 : cfg.sigma_n * z;
    }
    patches[i] = coin(rng) ? Patch::first : Patch::second;
  }
  return Dataset(cfg, std::move(labels), std::move(patches), std::move(noise));
}

Dataset generate_dataset(const DataConfig& cfg) {
  Rng rng = make_stream(cfg.seed, Stream::data);
  return draw_dataset(cfg, cfg.n, rng);
}

Dataset fresh_eval_set(const DataConfig& cfg, std::size_t n_eval) {
  if (n_eval == 0) throw ConfigError("data: n_eval must be at least 1");
  Rng rng = make_stream(cfg.seed, Stream::eval);
  DataConfig eval_cfg = cfg;
  eval_cfg.n = n_eval;
  return draw_dataset(eval_cfg, n_eval, rng);
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::size_t d = data.dim();
  out << "index,y,signal_patch";
  for (std::size_t k = 0; k < d; ++k) out << ",x1_" << k;
  for (std::size_t k = 0; k < d; ++k) out << ",x2_" << k;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample s = data.sample(i);
    out << i << ',' << s.y << ',' << static_cast<int>(s.signal_patch);
    for (const Eigen::VectorXd* patch : {&s.x1, &s.x2}) {
      for (Eigen::Index k = 0; k < patch->size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", (*patch)[k]);
        out << ',' << buf;
      }
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace prunelab
