#include "prunelab/diagnostics.hpp"

#include "prunelab/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace prunelab {

namespace {

using Index = Eigen::Index;

Index ix(std::size_t v) { return static_cast<Index>(v); }

void add_slack(CheckReport& rep, const std::string& name, double measured, double bound) {
  rep.slack.emplace_back(name, bound != 0.0 ? measured / bound : 0.0);
}

}  // namespace

std::string verdict_name(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::informational: return "informational";
  }
  return "unknown";
}

double CheckReport::measured_at(const std::string& name) const {
  for (const auto& [k, v] : measured) {
    if (k == name) return v;
  }
  throw std::out_of_range("no measured value named " + name);
}

std::string CheckReport::to_json() const {
  nlohmann::ordered_json j;
  j["check_id"] = check_id;
  j["passed"] = verdict_name(verdict);
  auto object = [](const NamedValues& values) {
    nlohmann::ordered_json o = nlohmann::ordered_json::object();
    for (const auto& [k, v] : values) o[k] = v;
    return o;
  };
  j["measured"] = object(measured);
  j["bound"] = object(bound);
  j["slack"] = object(slack);
  if (!notes.empty()) j["notes"] = notes;
  return j.dump();
}

CheckReport check_init_correlations(const MaskedNet& net0, const Dataset& data) {
  CheckReport rep;
  rep.check_id = "init_correlations";
  const std::size_t K = net0.K(), m = net0.m();
  const double d = static_cast<double>(net0.d());
  const double p = net0.mask().p();
  const double sigma0 = net0.sigma0();
  const double sigma_n = data.config().sigma_n;
  const double mu = data.mu();

  const double noise_scale = sigma0 * sigma_n * std::sqrt(p * d);
  const double noise_lo = noise_scale;
  const double noise_hi = std::sqrt(2.0 * std::log(static_cast<double>(K * m) * d)) * noise_scale;
  const double signal_lo = sigma0 * mu;
  const double signal_hi = std::sqrt(2.0 * std::log(std::max(8.0 * p * static_cast<double>(m * K) * d, 1.0))) * sigma0 * mu;

  // Per (j, i): max_r <w~_{j,r}, xi_i>.
  const RowMatrix corr = net0.weights() * data.noise().transpose();
  double noise_min = std::numeric_limits<double>::infinity();
  double noise_max = -std::numeric_limits<double>::infinity();
  std::size_t noise_violations = 0;
  for (std::size_t j = 0; j < K; ++j) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double v = corr.block(ix(j * m), ix(i), ix(m), 1).maxCoeff();
      noise_min = std::min(noise_min, v);
      noise_max = std::max(noise_max, v);
      // A zero maximum never meets the (positive) lower bracket, even when p d = 0 collapses it.
      if (v < noise_lo || v <= 0.0 || v > noise_hi) ++noise_violations;
    }
  }

  double signal_min = std::numeric_limits<double>::infinity();
  double signal_max = -std::numeric_limits<double>::infinity();
  std::size_t signal_violations = 0;
  std::size_t classes_checked = 0;
  for (std::size_t j = 0; j < K; ++j) {
    bool any = false;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < m; ++r) {
      if (!net0.mask().bit(j, r, j)) continue;
      any = true;
      best = std::max(best, mu * net0.weights()(ix(j * m + r), ix(j)));
    }
    if (!any) {
      rep.notes.push_back("class " + std::to_string(j) + ": no signal-receiving neuron, signal bracket not applicable");
      continue;
    }
    ++classes_checked;
    signal_min = std::min(signal_min, best);
    signal_max = std::max(signal_max, best);
    if (best < signal_lo || best > signal_hi) ++signal_violations;
  }
  if (classes_checked == 0) signal_min = signal_max = 0.0;

  rep.measured = {{"noise_max_min", noise_min},
                  {"noise_max_max", noise_max},
                  {"noise_violations", static_cast<double>(noise_violations)},
                  {"signal_max_min", signal_min},
                  {"signal_max_max", signal_max},
                  {"signal_violations", static_cast<double>(signal_violations)},
                  {"signal_classes_checked", static_cast<double>(classes_checked)}};
  rep.bound = {{"noise_lower", noise_lo},
               {"noise_upper", noise_hi},
               {"signal_lower", signal_lo},
               {"signal_upper", signal_hi}};
  add_slack(rep, "noise_lower", noise_min, noise_lo);
  add_slack(rep, "noise_upper", noise_max, noise_hi);
  if (classes_checked > 0) {
    add_slack(rep, "signal_lower", signal_min, signal_lo);
    add_slack(rep, "signal_upper", signal_max, signal_hi);
  }
  rep.verdict = (noise_violations == 0 && signal_violations == 0) ? Verdict::pass : Verdict::fail;
  return rep;
}

CheckReport check_class_balance(const Dataset& data) {
  CheckReport rep;
  rep.check_id = "class_balance";
  const auto counts = data.class_counts();
  const double K = static_cast<double>(data.classes());
  const double n = static_cast<double>(data.size());
  const double lo = 0.5 * n / K, hi = 1.5 * n / K;
  bool ok = true;
  double cmin = n, cmax = 0.0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    const double c = static_cast<double>(counts[j]);
    rep.measured.emplace_back("count_" + std::to_string(j), c);
    cmin = std::min(cmin, c);
    cmax = std::max(cmax, c);
    ok = ok && c >= lo && c <= hi;
  }
  rep.bound = {{"lower", lo}, {"upper", hi}};
  add_slack(rep, "lower", cmin, lo);
  add_slack(rep, "upper", cmax, hi);
  const double required = 2.0 * K * K * std::log(4.0 * K * static_cast<double>(data.dim()));
  if (data.classes() > 1 && n < required) {
    rep.verdict = Verdict::informational;
    rep.notes.push_back("n below 2 K^2 log(4 K d) = " + std::to_string(required) + "; hypothesis unmet");
  } else {
    rep.verdict = ok ? Verdict::pass : Verdict::fail;
  }
  return rep;
}

CheckReport check_noise_geometry(const Mask& mask, const Dataset& data, const NoiseGeometryOptions& opts) {
  CheckReport rep;
  rep.check_id = "noise_geometry";
  if (mask.d() != data.dim()) throw ConfigError("noise_geometry: mask and data dimensions differ");
  const double d = static_cast<double>(mask.d());
  const double p = mask.p();
  const double sigma_n = data.config().sigma_n;
  const double mu = data.mu();
  const double log_d = std::log(d);
  const double norm_scale = sigma_n * sigma_n * p * d;
  const double cross_scale = sigma_n * sigma_n * std::sqrt(p * d * log_d);
  const double signal_scale = sigma_n * mu * std::sqrt(log_d);

  Rng rng = make_stream(opts.seed, Stream::monte_carlo);
  std::uniform_int_distribution<std::size_t> pick_neuron(0, mask.neurons() - 1);
  std::uniform_int_distribution<std::size_t> pick_sample(0, data.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_class(0, mask.K() - 1);

  double norm_min = std::numeric_limits<double>::infinity(), norm_max = 0.0;
  double cross_max = 0.0, signal_max = 0.0;
  std::vector<double> norms;
  norms.reserve(opts.samples);
  std::size_t cross_count = 0;
  for (std::size_t s = 0; s < opts.samples; ++s) {
    const std::size_t neuron = pick_neuron(rng);
    const std::size_t i = pick_sample(rng);
    const std::size_t k = pick_class(rng);
    const auto bits = mask.row(neuron / mask.m(), neuron % mask.m());
    double norm_sq = 0.0;
    for (std::size_t c = 0; c < mask.d(); ++c) {
      const double v = bits[c] * data.noise()(ix(i), ix(c));
      norm_sq += v * v;
    }
    norms.push_back(norm_sq);
    const double norm_ratio = norm_scale > 0.0 ? norm_sq / norm_scale : 0.0;
    norm_min = std::min(norm_min, norm_ratio);
    norm_max = std::max(norm_max, norm_ratio);
    const double signal = bits[k] * mu * data.noise()(ix(i), ix(k));
    signal_max = std::max(signal_max, signal_scale > 0.0 ? std::abs(signal) / signal_scale : 0.0);
    if (data.size() > 1) {
      std::size_t i2 = pick_sample(rng);
      while (i2 == i) i2 = pick_sample(rng);
      double cross = 0.0;
      for (std::size_t c = 0; c < mask.d(); ++c) cross += bits[c] * data.noise()(ix(i), ix(c)) * data.noise()(ix(i2), ix(c));
      cross_max = std::max(cross_max, cross_scale > 0.0 ? std::abs(cross) / cross_scale : 0.0);
      ++cross_count;
    }
  }
  if (norms.empty()) norm_min = 0.0;
  double median = 0.0;
  if (!norms.empty()) {
    auto mid = norms.begin() + static_cast<std::ptrdiff_t>(norms.size() / 2);
    std::nth_element(norms.begin(), mid, norms.end());
    median = *mid;
  }
  rep.measured = {{"norm_ratio_min", norm_min},
                  {"norm_ratio_max", norm_max},
                  {"cross_ratio_max", cross_max},
                  {"signal_ratio_max", signal_max},
                  {"median_norm_sq", median},
                  {"cross_pairs", static_cast<double>(cross_count)}};
  rep.bound = {{"norm_ratio_lower", 0.5}, {"norm_ratio_upper", 1.5}};
  add_slack(rep, "norm_ratio_lower", norm_min, 0.5);
  add_slack(rep, "norm_ratio_upper", norm_max, 1.5);
  if (norm_scale <= 0.0) {
    rep.verdict = Verdict::informational;
    rep.notes.push_back("sigma_n^2 p d is zero; ratios reported as 0");
  } else {
    rep.verdict = (norm_min >= 0.5 && norm_max <= 1.5) ? Verdict::pass : Verdict::fail;
  }
  return rep;
}

InitScaleArms init_scale_condition(const ConditionInputs& in, const ConditionConstants& c, const MaskedNet& net0,
                                   const Dataset& data) {
  InitScaleArms arms;
  const double q = static_cast<double>(in.q);
  const double n = static_cast<double>(in.n);
  const double d = static_cast<double>(in.d);
  const double log_d = std::log(d);
  const double pd = in.p * d;
  arms.alpha = c.alpha_multiplier * std::pow(std::log(std::max<double>(static_cast<double>(in.t_max), 2.0)), 1.0 / q);

  arms.init_signal = -std::numeric_limits<double>::infinity();
  const auto counts = data.class_counts();
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] > 0) arms.init_signal = std::max(arms.init_signal, data.mu() * net0.weights().col(ix(k)).maxCoeff());
  }
  arms.init_noise = (net0.weights() * data.noise().transpose()).maxCoeff();
  if (pd > 0.0) {
    if (in.sigma_n > 0.0) arms.sample_signal = c.C * n * arms.alpha * in.mu * std::sqrt(log_d) / (in.sigma_n * pd);
    arms.sample_noise = 3.0 * c.C * n * arms.alpha * std::sqrt(log_d / pd);
  }
  const double top = std::max({arms.init_signal, arms.init_noise, arms.sample_signal, arms.sample_noise});
  arms.value = 4.0 * std::pow(static_cast<double>(in.m), 1.0 / q) * top;
  return arms;
}

CheckReport validate_condition_set(const ConditionInputs& in, const ConditionConstants& c, const MaskedNet* net0,
                                   const Dataset* data) {
  CheckReport rep;
  rep.check_id = "condition_set";
  rep.verdict = Verdict::informational;
  const double d = static_cast<double>(in.d);
  const double log_d = std::log(std::max(d, 2.0));
  const double K = static_cast<double>(in.K);
  const double n = static_cast<double>(in.n);
  const double m = static_cast<double>(in.m);

  std::size_t failed = 0;
  auto clause = [&](const std::string& name, double measured, double lo, double hi) {
    const bool ok = measured >= lo && measured <= hi;
    rep.measured.emplace_back(name, measured);
    if (std::isfinite(lo)) rep.bound.emplace_back(name + "_lower", lo);
    if (std::isfinite(hi)) rep.bound.emplace_back(name + "_upper", hi);
    rep.measured.emplace_back(name + "_ok", ok ? 1.0 : 0.0);
    if (!ok) {
      ++failed;
      rep.notes.push_back("clause " + name + " violated");
    }
  };
  const double inf = std::numeric_limits<double>::infinity();
  clause("classes", K, 0.0, c.class_factor * log_d);
  clause("samples", n, 1.0, std::pow(log_d, c.sample_log_power));
  clause("dimension", d, c.min_dim, inf);
  const double snr_ref = in.sigma_n * std::sqrt(d) * log_d;
  clause("signal_noise_ratio", snr_ref > 0.0 ? in.mu / snr_ref : inf, c.snr_low, c.snr_high);
  clause("width", m, std::pow(log_d, c.width_log_power), inf);
  const double sigma0_ref = std::pow(m, -4.0) / (n * in.mu);
  const double slack0 = std::pow(log_d, c.init_log_power);
  clause("init_scale", in.sigma0, sigma0_ref / slack0, sigma0_ref * slack0);
  clause("learning_rate", in.eta, std::pow(d, -c.eta_poly_power), c.eta_log_factor * log_d / (in.mu * in.mu));
  clause("target_loss", in.epsilon, std::pow(d, -c.eps_power_high), std::pow(d, -c.eps_power_low));
  rep.measured.emplace_back("clauses_failed", static_cast<double>(failed));

  if (net0 && data) {
    const InitScaleArms arms = init_scale_condition(in, c, *net0, *data);
    const double value = arms.value;
    rep.measured.emplace_back("init_arm_signal", arms.init_signal);
    rep.measured.emplace_back("init_arm_noise", arms.init_noise);
    rep.measured.emplace_back("sample_arm_signal", arms.sample_signal);
    rep.measured.emplace_back("sample_arm_noise", arms.sample_noise);
    rep.measured.emplace_back("alpha", arms.alpha);
    rep.measured.emplace_back("init_condition_value", value);
    rep.bound.emplace_back("init_condition_value", 1.0);
    add_slack(rep, "init_condition_value", value, 1.0);
    if (value > 1.0) rep.notes.push_back("init-scale condition exceeds 1");
    if (in.sigma_n == 0.0) rep.notes.push_back("sigma_n is zero; signal sample arm omitted");
  }
  return rep;
}

std::pair<double, double> wilson_interval(std::size_t k, std::size_t n) {
  if (n == 0) return {0.0, 1.0};
  const double z = 1.959963984540054;
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(k) / nn;
  const double denom = 1.0 + z * z / nn;
  const double centre = (ph + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(ph * (1.0 - ph) / nn + z * z / (4.0 * nn * nn)) / denom;
  if (k == 0) return {0.0, std::min(1.0, centre + half)};
  if (k == n) return {std::max(0.0, centre - half), 1.0};
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

CheckReport check_test_noise_concentration(const MaskedNet& net, const DataConfig& data_cfg,
                                           const ConcentrationOptions& opts) {
  if (opts.n_mc < 1000) throw ConfigError("noise concentration: n_mc must be at least 1000");
  if (data_cfg.d != net.d()) throw ConfigError("noise concentration: dimension mismatch");
  CheckReport rep;
  rep.check_id = "test_noise_concentration";
  const double q = static_cast<double>(net.activation().degree());
  const double m = static_cast<double>(net.m());
  const double threshold = std::pow(2.0 * m, -2.0 / q);

  Rng rng = make_stream(opts.seed, Stream::monte_carlo);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr std::size_t kChunk = 256;
  std::size_t hits = 0;
  double max_corr = 0.0;
  for (std::size_t done = 0; done < opts.n_mc; done += kChunk) {
    const std::size_t rows = std::min(kChunk, opts.n_mc - done);
    RowMatrix xi(ix(rows), ix(net.d()));
    for (Index e = 0; e < xi.size(); ++e) xi.data()[e] = data_cfg.sigma_n * normal(rng);
    const RowMatrix corr = net.weights() * xi.transpose();
    for (Index col = 0; col < corr.cols(); ++col) {
      const double v = corr.col(col).cwiseAbs().maxCoeff();
      max_corr = std::max(max_corr, v);
      if (v >= threshold) ++hits;
    }
  }
  const double est = static_cast<double>(hits) / static_cast<double>(opts.n_mc);
  const auto [lo, hi] = wilson_interval(hits, opts.n_mc);
  const double var = net.sigma0() * net.sigma0() * data_cfg.sigma_n * data_cfg.sigma_n * net.mask().p() *
                     static_cast<double>(net.d());
  const double bound = var > 0.0 ? 2.0 * static_cast<double>(net.K()) * m *
                                       std::exp(-std::pow(2.0 * m, -4.0 / q) / (opts.C * var))
                                 : 0.0;
  rep.measured = {{"probability", est}, {"ci_lower", lo}, {"ci_upper", hi}, {"max_abs_correlation", max_corr},
                  {"threshold", threshold}, {"n_mc", static_cast<double>(opts.n_mc)}};
  rep.bound = {{"probability", bound}};
  add_slack(rep, "probability", est, bound);
  if (bound >= 1.0) {
    rep.verdict = Verdict::informational;
    rep.notes.push_back("bound is vacuous (>= 1)");
  } else {
    rep.verdict = lo <= bound ? Verdict::pass : Verdict::fail;
  }
  return rep;
}

CheckReport check_generalization_gap(const MaskedNet& net, const Dataset& eval, const GapOptions& opts) {
  CheckReport rep;
  rep.check_id = "generalization_gap";
  rep.verdict = Verdict::informational;
  const EvalMetrics em = eval_metrics(net, eval);
  const double K = static_cast<double>(net.K());
  const double n = static_cast<double>(opts.n_train);
  const double mild_ref = K * opts.epsilon + (opts.p > 0.0 ? std::exp(-n * n / opts.p) : 0.0);
  const double over_ref = 0.9 * std::log(K);
  rep.measured = {{"test_loss", em.loss}, {"test_error", em.error_rate}, {"eval_size", static_cast<double>(eval.size())}};
  rep.bound = {{"mild_reference", mild_ref}, {"over_reference", over_ref}};
  add_slack(rep, "mild_reference", em.loss, mild_ref);
  add_slack(rep, "over_reference", em.loss, over_ref);
  std::string regime = "neither";
  if (net.K() > 1 && em.loss >= over_ref) {
    regime = "over_pruning";
  } else if (em.error_rate <= 0.05) {
    regime = "mild_pruning";
  }
  rep.notes.push_back("matches " + regime);
  return rep;
}

CheckReport check_grad_bound(const MaskedNet& net, const Dataset& data, double ceiling) {
  CheckReport rep;
  rep.check_id = "grad_bound";
  const BoundReport b = grad_norm_bound_check(net, data);
  rep.measured = {{"grad_sq_norm", b.grad_sq_norm}, {"train_loss", b.loss}, {"scale", b.scale}, {"ratio", b.ratio}};
  rep.bound = {{"ratio", ceiling}};
  add_slack(rep, "ratio", b.ratio, ceiling);
  if (b.degenerate) {
    rep.verdict = Verdict::informational;
    rep.notes.push_back("training loss is zero; ratio undefined");
  } else {
    rep.verdict = b.ratio <= ceiling ? Verdict::pass : Verdict::fail;
  }
  return rep;
}

}  // namespace prunelab
