#include "prunelab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace prunelab {

namespace {

constexpr std::size_t kKeptViolations = 20;

double class_value(const TraceRow& row, std::size_t j, PhaseMode mode) {
  return mode == PhaseMode::signal ? row.class_signal[j] : row.class_noise[j];
}

void fill_coefficients(TraceRow& row, const DecompState& state) {
  const CoefficientSummary s = summarize(state);
  row.max_gamma_diag = s.max_gamma_diag;
  row.max_zeta = s.max_zeta;
  row.max_abs_omega = s.max_abs_omega;
  row.max_abs_gamma_offdiag = s.max_abs_gamma_offdiag;
  row.class_signal = s.class_signal;
  row.class_noise = s.class_noise;
}

}  // namespace

std::string termination_name(Termination t) {
  switch (t) {
    case Termination::loss_below_epsilon: return "loss_below_epsilon";
    case Termination::t_max_reached: return "t_max_reached";
    case Termination::numeric_error: return "numeric_error";
  }
  return "unknown";
}

std::string phase_mode_name(PhaseMode mode) { return mode == PhaseMode::signal ? "signal" : "noise"; }

PhaseMode parse_phase_mode(const std::string& name) {
  if (name == "signal") return PhaseMode::signal;
  if (name == "noise") return PhaseMode::noise;
  throw ConfigError("unknown phase mode '" + name + "' (expected signal or noise)");
}

void TrainConfig::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("train: eta must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be positive");
  if (t_max < 1) throw ConfigError("train: t_max must be at least 1");
  if (log_every < 1) throw ConfigError("train: log_every must be at least 1");
  if (phase_threshold && !(*phase_threshold > 0.0)) throw ConfigError("train: phase_threshold must be positive");
}

double TrainConfig::threshold(const MaskedNet& net) const {
  if (phase_threshold) return *phase_threshold;
  return std::pow(static_cast<double>(net.m()), -1.0 / static_cast<double>(net.activation().degree()));
}

std::optional<std::uint64_t> TrainTrace::overall_t1() const {
  if (t1.empty()) return std::nullopt;
  std::uint64_t latest = 0;
  for (const auto& v : t1) {
    if (!v) return std::nullopt;
    latest = std::max(latest, *v);
  }
  return latest;
}

StepStats gd_step(MaskedNet& net, const Dataset& data, double eta) {
  if (!(eta >= 0.0)) throw ConfigError("gd_step: eta must be non-negative");
  const LossGrad lg = loss_and_grad(net, data);
  StepStats stats{net.iteration(), lg.loss, lg.grad.squaredNorm()};
  net.apply_step(lg.grad, eta);
  return stats;
}

TrainTrace train(MaskedNet& net, const Dataset& data, const TrainConfig& cfg, DecompState* decomp) {
  cfg.validate();
  if (decomp && decomp->iteration != net.iteration()) {
    throw ContractError("train: decomposition state is not at the network's iterate");
  }
  TrainTrace trace;
  trace.threshold = cfg.threshold(net);
  if (decomp) trace.t1.assign(net.K(), std::nullopt);

  const std::uint64_t t_start = net.iteration();
  double last_residual = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t last_logged = 0;
  bool has_logged = false;
  std::optional<DecompState> before;

  auto note_violations = [&](const std::vector<std::string>& v, std::uint64_t t) {
    trace.invariant_violations += v.size();
    for (const auto& msg : v) {
      if (trace.first_violations.size() >= kKeptViolations) break;
      trace.first_violations.push_back("t=" + std::to_string(t) + ": " + msg);
    }
  };

  for (;;) {
    const std::uint64_t t = net.iteration();
    LossGrad lg;
    try {
      lg = loss_and_grad(net, data);
    } catch (const NumericError& e) {
      trace.termination = Termination::numeric_error;
      trace.error = e.what();
      break;
    }
    trace.clamped_losses += lg.record.clamped_losses;

    std::optional<Termination> stop;
    if (lg.loss <= cfg.epsilon) {
      stop = Termination::loss_below_epsilon;
    } else if (t - t_start >= cfg.t_max) {
      stop = Termination::t_max_reached;
    }

    TraceRow row;
    row.t = t;
    row.train_loss = lg.loss;
    row.train_err = lg.record.error_rate(data);
    row.grad_sq_norm = lg.grad.squaredNorm();
    row.bound_ratio = bound_ratio(row.grad_sq_norm, lg.loss, net, data.config()).ratio;
    row.recon_residual = std::numeric_limits<double>::quiet_NaN();
    trace.max_bound_ratio = std::max(trace.max_bound_ratio, row.bound_ratio);

    if (decomp) {
      fill_coefficients(row, *decomp);
      for (std::size_t j = 0; j < net.K(); ++j) {
        if (!trace.t1[j] && class_value(row, j, cfg.phase_mode) >= trace.threshold) trace.t1[j] = t;
      }
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.max_gamma_diag = row.max_zeta = row.max_abs_omega = row.max_abs_gamma_offdiag = nan;
    }

    const bool log_now = stop.has_value() || (t - t_start) % cfg.log_every == 0;
    if (log_now) {
      if (decomp) {
        row.recon_residual = reconstruct(*decomp, data, net).report.max_rel_residual;
        trace.max_recon_residual = std::max(trace.max_recon_residual, row.recon_residual);
        if (has_logged && last_logged + 1 == t && std::isfinite(last_residual)) {
          trace.max_residual_growth = std::max(trace.max_residual_growth, row.recon_residual - last_residual);
        }
        last_residual = row.recon_residual;
      }
      last_logged = t;
      has_logged = true;
      trace.rows.push_back(std::move(row));
    }

    if (stop) {
      trace.termination = *stop;
      break;
    }

    if (!lg.grad.allFinite()) {
      trace.termination = Termination::numeric_error;
      trace.error = "non-finite gradient at iteration " + std::to_string(t);
      break;
    }
    if (decomp) {
      if (cfg.check_invariants) before = *decomp;
      update_coefficients(*decomp, lg.record, net, cfg.eta);
    }
    try {
      net.apply_step(lg.grad, cfg.eta);
    } catch (const NumericError& e) {
      trace.termination = Termination::numeric_error;
      trace.error = e.what();
      break;
    }
    if (decomp && cfg.check_invariants) {
      note_violations(invariant_violations(*decomp, net.mask()), t + 1);
      note_violations(monotonicity_violations(*before, *decomp), t + 1);
    }
  }
  trace.final_iteration = net.iteration();
  return trace;
}

std::vector<std::optional<std::uint64_t>> detect_phase_transition(const TrainTrace& trace, double threshold,
                                                                  PhaseMode mode) {
  std::vector<std::optional<std::uint64_t>> out;
  if (trace.rows.empty()) return out;
  const std::size_t K =
      mode == PhaseMode::signal ? trace.rows.front().class_signal.size() : trace.rows.front().class_noise.size();
  out.assign(K, std::nullopt);
  for (const TraceRow& row : trace.rows) {
    for (std::size_t j = 0; j < K; ++j) {
      if (!out[j] && class_value(row, j, mode) >= threshold) out[j] = row.t;
    }
  }
  return out;
}

void write_trace_csv(std::ostream& out, const TrainTrace& trace) {
  out << "t,train_loss,train_err,max_gamma_diag,max_zeta,max_abs_omega,max_abs_gamma_offdiag,grad_sq_norm,"
         "recon_residual\n";
  char buf[512];
  for (const TraceRow& r : trace.rows) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<unsigned long long>(r.t), r.train_loss, r.train_err, r.max_gamma_diag, r.max_zeta,
                  r.max_abs_omega, r.max_abs_gamma_offdiag, r.grad_sq_norm, r.recon_residual);
    out << buf;
  }
}

}  // namespace prunelab
