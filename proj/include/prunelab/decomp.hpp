#pragma once

#include "prunelab/common.hpp"
#include "prunelab/model.hpp"
#include "prunelab/pruner.hpp"
#include "prunelab/synthdata.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace prunelab {

/// Signal-noise decomposition of every neuron:
///   w~_{j,r}(t) = w~_{j,r}(0) + sum_k gamma_{j,r,k} |mu_k|^-2 mu_k (.) m_{j,r}
///               + sum_i (zeta_{j,r,i} + omega_{j,r,i}) |xi~_{j,r,i}|^-2 xi~_{j,r,i}
/// with xi~_{j,r,i} = xi_i (.) m_{j,r}. Tables are indexed by neuron row j*m + r.
struct DecompState {
  std::size_t K = 0, m = 0, n = 0, d = 0;
  std::uint64_t iteration = 0;
  double mu = 0.0;
  RowMatrix gamma;              // (K*m) x K
  RowMatrix zeta;               // (K*m) x n, nonzero only where j == y_i
  RowMatrix omega;              // (K*m) x n, nonzero only where j != y_i
  RowMatrix xi_tilde_sq_norms;  // (K*m) x n
  RowMatrix w0;                 // (K*m) x d snapshot at init
  std::vector<std::size_t> labels;
  std::vector<std::uint8_t> signal_member;  // [j*m + r]: r in S_signal^j

  double gamma_at(std::size_t j, std::size_t r, std::size_t k) const {
    return gamma(static_cast<Eigen::Index>(j * m + r), static_cast<Eigen::Index>(k));
  }
  double zeta_at(std::size_t j, std::size_t r, std::size_t i) const {
    return zeta(static_cast<Eigen::Index>(j * m + r), static_cast<Eigen::Index>(i));
  }
  double omega_at(std::size_t j, std::size_t r, std::size_t i) const {
    return omega(static_cast<Eigen::Index>(j * m + r), static_cast<Eigen::Index>(i));
  }
};

/// Zero coefficients, cached |xi~|^2 and the W~(0) snapshot.
DecompState init_decomp(const MaskedNet& net0, const Dataset& data);

/// One lockstep update from the forward record of the iterate the GD step
/// consumed. Throws ContractError if the record, net and state iterations differ.
void update_coefficients(DecompState& state, const ForwardRecord& record, const MaskedNet& net, double eta);

struct ReconReport {
  double max_abs_residual = 0.0;
  double max_rel_residual = 0.0;
  std::size_t worst_j = 0;
  std::size_t worst_r = 0;
};

struct Reconstruction {
  RowMatrix weights;
  ReconReport report;
};

/// Rebuilds the weights from the coefficients and compares against `live`.
/// Noise directions with |xi~|^2 == 0 are skipped.
Reconstruction reconstruct(const DecompState& state, const Dataset& data, const MaskedNet& live);

/// Per-neuron residual |w - rec| (relative to |w|; absolute when |w| == 0).
ReconReport residual_report(const RowMatrix& reconstructed, const MaskedNet& live);

struct OracleNeuron {
  std::size_t j = 0, r = 0;
  std::size_t basis_size = 0;
  double condition = 0.0;
  bool rank_deficient = false;
  std::size_t comparisons = 0;
  std::size_t agreements = 0;
  double max_abs_diff = 0.0;
  std::vector<double> recovered_gamma;  // size K (0 where the signal direction is pruned)
  std::vector<double> recovered_noise;  // size n (zeta + omega)
};

struct OracleReport {
  bool non_unique = false;  // p d <= n + K
  double ridge = 0.0;
  double tolerance = 0.0;
  std::size_t comparisons = 0;
  std::size_t agreements = 0;
  std::size_t skipped_neurons = 0;
  double max_abs_diff = 0.0;
  double max_condition = 0.0;
  std::vector<OracleNeuron> neurons;

  double agreement_rate() const {
    return comparisons == 0 ? 0.0 : static_cast<double>(agreements) / static_cast<double>(comparisons);
  }
};

struct OracleOptions {
  double ridge = 1e-12;
  double tolerance = 1e-6;
  double rank_tolerance = 1e-12;  // relative eigenvalue floor of the Gram matrix
};

/// Least-squares recovery of each listed neuron's coefficients from
/// w~(t) - w~(0) via the normal equations of the basis
/// {mu_k (.) m_{j,r}} U {xi~_{j,r,i}}, compared with the tracked values.
OracleReport projection_oracle(const MaskedNet& net, const DecompState& state, const Dataset& data,
                               const std::vector<std::pair<std::size_t, std::size_t>>& neurons,
                               const OracleOptions& options = {});

/// `count` distinct (j, r) pairs drawn uniformly.
std::vector<std::pair<std::size_t, std::size_t>> sample_neurons(std::size_t K, std::size_t m, std::size_t count,
                                                                Rng& rng);

struct CoefficientSummary {
  double max_gamma_diag = 0.0;
  double max_zeta = 0.0;
  double max_abs_omega = 0.0;
  double max_abs_gamma_offdiag = 0.0;
  double min_omega = 0.0;
  double min_gamma_offdiag = 0.0;
  std::vector<double> class_signal;  // max_r gamma_{j,r,j}
  std::vector<double> class_noise;   // min over class-j samples of max_r zeta_{j,r,i}
  std::vector<double> sample_noise;  // max_r zeta_{y_i,r,i}
};

CoefficientSummary summarize(const DecompState& state);

/// Sign structure, gating and pruned-signal checks. Empty when all hold.
std::vector<std::string> invariant_violations(const DecompState& state, const Mask& mask);

/// Monotonicity between consecutive states. Empty when all hold.
std::vector<std::string> monotonicity_violations(const DecompState& before, const DecompState& after);

struct BoundsConfig {
  std::optional<double> alpha;    // defaults to alpha_multiplier * log^{1/q}(t_max)
  double alpha_multiplier = 2.0;
  std::uint64_t t_max = 1000;
  int q = 3;
  double C = 1.0;
  double p = 1.0;
  double sigma_n = 0.0;
};

struct PropReport {
  double alpha = 0.0;
  double beta = 0.0;
  double max_gamma_diag = 0.0;
  double max_zeta = 0.0;
  double min_omega = 0.0;
  double min_gamma_offdiag = 0.0;
  std::optional<double> omega_lower;         // -beta - 6 C n alpha sqrt(log d / (p d))
  std::optional<double> gamma_offdiag_lower; // -beta - 2 C n alpha mu sqrt(log d) / (sigma_n p d)
  bool upper_ok = true;
  bool omega_ok = true;
  bool gamma_offdiag_ok = true;
};

PropReport coefficient_bounds_check(const DecompState& state, const Dataset& data, const BoundsConfig& cfg);

/// Rows t, j, r, k_or_i, kind, value for every structurally non-gated coefficient.
void write_coefficients_csv(std::ostream& out, const DecompState& state, bool header);

}  // namespace prunelab
