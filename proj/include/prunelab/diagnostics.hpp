#pragma once

#include "prunelab/model.hpp"
#include "prunelab/pruner.hpp"
#include "prunelab/synthdata.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace prunelab {

enum class Verdict { pass, fail, informational };

std::string verdict_name(Verdict v);

using NamedValues = std::vector<std::pair<std::string, double>>;

struct CheckReport {
  std::string check_id;
  Verdict verdict = Verdict::informational;
  NamedValues measured;
  NamedValues bound;
  NamedValues slack;  // measured / bound for matching pairs
  std::vector<std::string> notes;

  /// Looks up a measured value; throws std::out_of_range if absent.
  double measured_at(const std::string& name) const;
  /// One JSON object on a single line.
  std::string to_json() const;
};

/// Initialization brackets for the per-(class, sample) noise maximum and the
/// per-class signal maximum over signal-receiving neurons.
CheckReport check_init_correlations(const MaskedNet& net0, const Dataset& data);

/// Every class count in [0.5 n/K, 1.5 n/K]. Informational when n < 2 K^2 log(4 K d).
CheckReport check_class_balance(const Dataset& data);

struct NoiseGeometryOptions {
  std::size_t samples = 2000;
  std::uint64_t seed = 0;
};

/// Extremes of |xi~|^2 / (sigma_n^2 p d), |<xi~_i, xi_i'>| / (sigma_n^2 sqrt(pd log d)) and
/// |<mu_k, xi~_i>| / (sigma_n mu sqrt(log d)) over sampled (j, r, i, i') tuples.
CheckReport check_noise_geometry(const Mask& mask, const Dataset& data, const NoiseGeometryOptions& opts = {});

struct ConditionInputs {
  std::size_t K = 0, d = 0, n = 0, m = 0;
  double mu = 1.0, sigma_n = 0.0, sigma0 = 0.0, eta = 0.0, epsilon = 0.0, p = 1.0;
  int q = 3;
  std::uint64_t t_max = 1;
};

struct ConditionConstants {
  double class_factor = 1.0;          // K <= c log d
  double sample_log_power = 3.0;      // n <= (log d)^c
  double min_dim = 100.0;             // d >= C_d
  double snr_low = 1.0 / 32.0;        // mu / (sigma_n sqrt(d) log d) in [low, high]
  double snr_high = 32.0;
  double width_log_power = 2.0;       // m >= (log d)^c
  double init_log_power = 8.0;        // sigma0 within (log d)^{+-c} of m^-4 n^-1 mu^-1
  double eta_poly_power = 2.0;        // eta >= d^-c
  double eta_log_factor = 1.0;        // eta <= c log d / mu^2
  double eps_power_low = 0.5;         // d^-high <= eps <= d^-low
  double eps_power_high = 1.0;
  double C = 1.0;                     // constant inside the init-scale condition
  double alpha_multiplier = 2.0;
};

/// The eight regime clauses (informational). With net0 and data, also the
/// init-scale condition value 4 m^{1/q} max{...}.
CheckReport validate_condition_set(const ConditionInputs& in, const ConditionConstants& c = {},
                                   const MaskedNet* net0 = nullptr, const Dataset* data = nullptr);

struct InitScaleArms {
  double init_signal = 0.0;    // max <w~(0)_{j,r}, mu_{y_i}>
  double init_noise = 0.0;     // max <w~(0)_{j,r}, xi_i>
  double sample_signal = 0.0;  // C n alpha mu sqrt(log d) / (sigma_n p d)
  double sample_noise = 0.0;   // 3 C n alpha sqrt(log d / (p d))
  double alpha = 0.0;
  double value = 0.0;          // 4 m^{1/q} max of the arms; must be <= 1
};

InitScaleArms init_scale_condition(const ConditionInputs& in, const ConditionConstants& c, const MaskedNet& net0,
                                   const Dataset& data);

struct ConcentrationOptions {
  std::size_t n_mc = 2000;
  double C = 1.0;
  std::uint64_t seed = 0;
};

/// Monte-Carlo estimate of Pr[max_{j,r} |<w~, xi>| >= (2m)^{-2/q}] for fresh xi.
CheckReport check_test_noise_concentration(const MaskedNet& net, const DataConfig& data_cfg,
                                           const ConcentrationOptions& opts = {});

/// Wilson 95% interval for k successes in n trials.
std::pair<double, double> wilson_interval(std::size_t k, std::size_t n);

struct GapOptions {
  double epsilon = 1e-2;
  double p = 1.0;
  std::size_t n_train = 1;
};

CheckReport check_generalization_gap(const MaskedNet& net, const Dataset& eval, const GapOptions& opts);

/// Gradient-norm certificate ratio against a regression ceiling.
CheckReport check_grad_bound(const MaskedNet& net, const Dataset& data, double ceiling = 100.0);

}  // namespace prunelab
