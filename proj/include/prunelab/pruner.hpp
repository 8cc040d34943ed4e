#pragma once

#include "prunelab/common.hpp"
#include "prunelab/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace prunelab {

/// Frozen binary pruning mask, dense bytes indexed [class j][neuron r][coordinate k].
class Mask {
 public:
  Mask(std::size_t K, std::size_t m, std::size_t d, double p, std::uint64_t seed, std::vector<std::uint8_t> bits);

  /// All-ones mask (dense network).
  static Mask dense(std::size_t K, std::size_t m, std::size_t d);

  std::size_t K() const { return K_; }
  std::size_t m() const { return m_; }
  std::size_t d() const { return d_; }
  std::size_t neurons() const { return K_ * m_; }
  double p() const { return p_; }
  std::uint64_t seed() const { return seed_; }

  bool bit(std::size_t j, std::size_t r, std::size_t k) const { return bits_[(j * m_ + r) * d_ + k] != 0; }
  std::span<const std::uint8_t> row(std::size_t j, std::size_t r) const {
    return {bits_.data() + (j * m_ + r) * d_, d_};
  }
  std::span<const std::uint8_t> bits() const { return bits_; }

  /// Row-major 0/1 matrix with the same layout as the weights.
  RowMatrix as_matrix() const;

  std::size_t total_ones() const;
  std::uint64_t hash() const;

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::size_t K_, m_, d_;
  double p_;
  std::uint64_t seed_;
  std::vector<std::uint8_t> bits_;
};

/// Bits drawn in row-major order, bit = (u < p) with u uniform in [0,1).
/// `seed` is only recorded for export. Throws ConfigError when p is outside [0, 1].
Mask sample_mask(std::size_t K, std::size_t m, std::size_t d, double p, Rng& rng, std::uint64_t seed = 0);

struct RejectionResult {
  Mask mask;
  std::uint64_t attempts;
};

/// Bernoulli(p) mask conditioned on every class signal coordinate being pruned
/// (bit [j][r][j] == 0 for all j, r). The K*m signal bits are redrawn until all
/// are zero, then the remaining bits are drawn. Throws ConfigError if the event
/// is impossible (p == 1) or needs more than `max_attempts` draws.
RejectionResult sample_mask_without_signal(std::size_t K, std::size_t m, std::size_t d, double p, Rng& rng,
                                           std::uint64_t seed, std::uint64_t max_attempts);

/// Per class, the neurons whose mask retains / kills that class's signal coordinate.
struct SignalPartition {
  std::vector<std::vector<std::size_t>> signal_set;
  std::vector<std::vector<std::size_t>> noise_set;
  std::vector<std::uint8_t> membership;  // [j * m + r] -> 1 iff r in signal_set[j]
  std::size_t m = 0;

  bool in_signal(std::size_t j, std::size_t r) const { return membership[j * m + r] != 0; }
  bool all_signal_sets_empty() const;
};

SignalPartition partition_neurons(const Mask& mask);

struct MaskStatsReport {
  std::size_t nnz_min = 0;
  std::size_t nnz_max = 0;
  double nnz_mean = 0.0;
  std::vector<std::size_t> nnz_per_neuron;        // [j * m + r]
  std::vector<std::size_t> column_sums;           // [j * d + k] = sum_r bit[j][r][k]
  std::vector<std::size_t> signal_set_sizes;      // per class
  bool all_signal_sets_empty = false;
};

MaskStatsReport mask_stats(const Mask& mask);

/// (1 - p)^(K m): probability that no neuron of any class retains its signal coordinate.
double empty_signal_probability(std::size_t K, std::size_t m, double p);

/// Binary export: K, m, d (uint64), p (float64), seed (uint64), all little-endian,
/// followed by K*m*d row-major bytes.
void save_mask(const Mask& mask, const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);

}  // namespace prunelab
