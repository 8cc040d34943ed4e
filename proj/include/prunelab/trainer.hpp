#pragma once

#include "prunelab/decomp.hpp"
#include "prunelab/model.hpp"
#include "prunelab/synthdata.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace prunelab {

enum class Termination { loss_below_epsilon, t_max_reached, numeric_error };

std::string termination_name(Termination t);

/// Which coefficient family defines T1: gamma_{j,r,j} (signal) or zeta (noise).
enum class PhaseMode { signal, noise };

std::string phase_mode_name(PhaseMode mode);
PhaseMode parse_phase_mode(const std::string& name);

struct TrainConfig {
  double eta = 0.001;
  double epsilon = 1e-2;
  std::uint64_t t_max = 1000;
  std::uint64_t log_every = 1;
  bool track_decomposition = false;
  std::optional<double> phase_threshold;  // default m^{-1/q}
  PhaseMode phase_mode = PhaseMode::signal;
  /// Per-step sign, gating and monotonicity assertions on the coefficients.
  bool check_invariants = false;

  void validate() const;
  double threshold(const MaskedNet& net) const;
};

struct TraceRow {
  std::uint64_t t = 0;
  double train_loss = 0.0;
  double train_err = 0.0;
  double max_gamma_diag = 0.0;
  double max_zeta = 0.0;
  double max_abs_omega = 0.0;
  double max_abs_gamma_offdiag = 0.0;
  double grad_sq_norm = 0.0;
  double recon_residual = 0.0;  // NaN when the decomposition is not tracked
  double bound_ratio = 0.0;
  std::vector<double> class_signal;  // max_r gamma_{j,r,j}
  std::vector<double> class_noise;   // min over class-j samples of max_r zeta_{j,r,i}
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  std::uint64_t final_iteration = 0;
  Termination termination = Termination::t_max_reached;
  std::string error;
  double threshold = 0.0;
  /// First iteration at which each class's coefficient crossed the threshold,
  /// scanned at every step (not only logged rows). Empty without tracking.
  std::vector<std::optional<std::uint64_t>> t1;
  double max_bound_ratio = 0.0;
  /// Largest increase of the relative reconstruction residual between two
  /// consecutive logged rows.
  double max_residual_growth = 0.0;
  double max_recon_residual = 0.0;
  std::size_t invariant_violations = 0;
  std::vector<std::string> first_violations;
  std::size_t clamped_losses = 0;

  /// Latest per-class T1 if every class crossed.
  std::optional<std::uint64_t> overall_t1() const;
};

struct StepStats {
  std::uint64_t iteration = 0;  // iterate the loss was measured at
  double loss = 0.0;
  double grad_sq_norm = 0.0;
};

/// One full-batch GD step. Returns the pre-step loss.
StepStats gd_step(MaskedNet& net, const Dataset& data, double eta);

/// GD until L_S <= epsilon or t_max. With `decomp` non-null the coefficients
/// are updated in lockstep. A NumericError ends the run with a partial trace.
TrainTrace train(MaskedNet& net, const Dataset& data, const TrainConfig& cfg, DecompState* decomp = nullptr);

/// First logged t at which each class's tracked coefficient reaches `threshold`.
std::vector<std::optional<std::uint64_t>> detect_phase_transition(const TrainTrace& trace, double threshold,
                                                                  PhaseMode mode);

/// Columns t, train_loss, train_err, max_gamma_diag, max_zeta, max_abs_omega,
/// max_abs_gamma_offdiag, grad_sq_norm, recon_residual.
void write_trace_csv(std::ostream& out, const TrainTrace& trace);

}  // namespace prunelab
