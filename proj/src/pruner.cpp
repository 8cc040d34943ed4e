#include "prunelab/pruner.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace prunelab {

namespace {

void check_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("pruner: retention probability p must lie in [0, 1]");
}

void check_shape(std::size_t K, std::size_t m, std::size_t d) {
  if (K == 0 || m == 0 || d == 0) throw ConfigError("pruner: K, m and d must be positive");
}

}  // namespace

Mask::Mask(std::size_t K, std::size_t m, std::size_t d, double p, std::uint64_t seed, std::vector<std::uint8_t> bits)
    : K_(K), m_(m), d_(d), p_(p), seed_(seed), bits_(std::move(bits)) {
  check_shape(K, m, d);
  check_probability(p);
  if (bits_.size() != K * m * d) throw ConfigError("mask: bit count does not match K*m*d");
  for (std::uint8_t b : bits_) {
    if (b > 1) throw ConfigError("mask: entries must be 0 or 1");
  }
}

Mask Mask::dense(std::size_t K, std::size_t m, std::size_t d) {
  return Mask(K, m, d, 1.0, 0, std::vector<std::uint8_t>(K * m * d, 1));
}

RowMatrix Mask::as_matrix() const {
  RowMatrix out(static_cast<Eigen::Index>(neurons()), static_cast<Eigen::Index>(d_));
  double* dst = out.data();
  for (std::size_t idx = 0; idx < bits_.size(); ++idx) dst[idx] = bits_[idx];
  return out;
}

std::size_t Mask::total_ones() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }

std::uint64_t Mask::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bits_) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Mask sample_mask(std::size_t K, std::size_t m, std::size_t d, double p, Rng& rng, std::uint64_t seed) {
  check_shape(K, m, d);
  check_probability(p);
  std::vector<std::uint8_t> bits(K * m * d);
  for (auto& b : bits) b = uniform01(rng) < p ? 1 : 0;
  return Mask(K, m, d, p, seed, std::move(bits));
}

RejectionResult sample_mask_without_signal(std::size_t K, std::size_t m, std::size_t d, double p, Rng& rng,
                                           std::uint64_t seed, std::uint64_t max_attempts) {
  check_shape(K, m, d);
  check_probability(p);
  if (K > d) throw ConfigError("pruner: K must not exceed d");
  if (p >= 1.0) throw ConfigError("pruner: signal-free mask is impossible at p = 1");

  // An attempt fails at its first retained signal bit; later bits of a failed
  // attempt are irrelevant, so drawing stops there.
  std::uint64_t attempts = 0;
  const std::size_t signal_bits = K * m;
  for (;;) {
    if (attempts == max_attempts) {
      throw ConfigError("pruner: no signal-free mask within " + std::to_string(max_attempts) + " attempts");
    }
    ++attempts;
    bool hit = false;
    for (std::size_t b = 0; b < signal_bits && !hit; ++b) hit = uniform01(rng) < p;
    if (!hit) break;
  }

  std::vector<std::uint8_t> bits(K * m * d);
  for (std::size_t j = 0; j < K; ++j) {
    for (std::size_t r = 0; r < m; ++r) {
      std::uint8_t* row = bits.data() + (j * m + r) * d;
      for (std::size_t k = 0; k < d; ++k) {
        row[k] = (k == j) ? 0 : (uniform01(rng) < p ? 1 : 0);
      }
    }
  }
  return {Mask(K, m, d, p, seed, std::move(bits)), attempts};
}

bool SignalPartition::all_signal_sets_empty() const {
  return std::all_of(signal_set.begin(), signal_set.end(), [](const auto& s) { return s.empty(); });
}

SignalPartition partition_neurons(const Mask& mask) {
  if (mask.K() > mask.d()) throw ConfigError("pruner: K must not exceed d");
  SignalPartition part;
  part.m = mask.m();
  part.signal_set.resize(mask.K());
  part.noise_set.resize(mask.K());
  part.membership.assign(mask.neurons(), 0);
  for (std::size_t j = 0; j < mask.K(); ++j) {
    for (std::size_t r = 0; r < mask.m(); ++r) {
      if (mask.bit(j, r, j)) {
        part.signal_set[j].push_back(r);
        part.membership[j * mask.m() + r] = 1;
      } else {
        part.noise_set[j].push_back(r);
      }
    }
  }
  return part;
}

MaskStatsReport mask_stats(const Mask& mask) {
  MaskStatsReport rep;
  const std::size_t K = mask.K(), m = mask.m(), d = mask.d();
  rep.nnz_per_neuron.resize(K * m);
  rep.column_sums.assign(K * d, 0);
  for (std::size_t j = 0; j < K; ++j) {
    for (std::size_t r = 0; r < m; ++r) {
      const auto row = mask.row(j, r);
      std::size_t nnz = 0;
      for (std::size_t k = 0; k < d; ++k) {
        nnz += row[k];
        rep.column_sums[j * d + k] += row[k];
      }
      rep.nnz_per_neuron[j * m + r] = nnz;
    }
  }
  const auto [lo, hi] = std::minmax_element(rep.nnz_per_neuron.begin(), rep.nnz_per_neuron.end());
  rep.nnz_min = *lo;
  rep.nnz_max = *hi;
  rep.nnz_mean = static_cast<double>(std::accumulate(rep.nnz_per_neuron.begin(), rep.nnz_per_neuron.end(),
                                                     std::size_t{0})) /
                 static_cast<double>(K * m);
  if (K <= d) {
    const SignalPartition part = partition_neurons(mask);
    for (const auto& s : part.signal_set) rep.signal_set_sizes.push_back(s.size());
    rep.all_signal_sets_empty = part.all_signal_sets_empty();
  }
  return rep;
}

double empty_signal_probability(std::size_t K, std::size_t m, double p) {
  check_probability(p);
  if (p == 0.0) return 1.0;
  if (p == 1.0) return 0.0;
  return std::exp(static_cast<double>(K * m) * std::log1p(-p));
}

void save_mask(const Mask& mask, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  detail::write_u64(out, mask.K());
  detail::write_u64(out, mask.m());
  detail::write_u64(out, mask.d());
  detail::write_f64(out, mask.p());
  detail::write_u64(out, mask.seed());
  const auto bits = mask.bits();
  out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Mask load_mask(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::uint64_t K = detail::read_u64(in);
  const std::uint64_t m = detail::read_u64(in);
  const std::uint64_t d = detail::read_u64(in);
  const double p = detail::read_f64(in);
  const std::uint64_t seed = detail::read_u64(in);
  constexpr std::uint64_t kLimit = std::uint64_t{1} << 34;
  if (K == 0 || m == 0 || d == 0 || K > kLimit / m || K * m > kLimit / d) {
    throw IoError("mask file has an invalid shape: " + path.string());
  }
  std::vector<std::uint8_t> bits(K * m * d);
  in.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
  if (!in) throw IoError("mask file truncated: " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("mask file has trailing bytes: " + path.string());
  return Mask(K, m, d, p, seed, std::move(bits));
}

}  // namespace prunelab
