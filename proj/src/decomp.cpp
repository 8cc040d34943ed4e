#include "prunelab/decomp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace prunelab {

namespace {

using Index = Eigen::Index;

Index ix(std::size_t v) { return static_cast<Index>(v); }

}  // namespace

DecompState init_decomp(const MaskedNet& net0, const Dataset& data) {
  if (data.dim() != net0.d() || data.classes() != net0.K()) {
    throw ConfigError("decomp: data does not match the network");
  }
  DecompState s;
  s.K = net0.K();
  s.m = net0.m();
  s.n = data.size();
  s.d = net0.d();
  s.iteration = net0.iteration();
  s.mu = data.mu();
  s.gamma = RowMatrix::Zero(ix(s.K * s.m), ix(s.K));
  s.zeta = RowMatrix::Zero(ix(s.K * s.m), ix(s.n));
  s.omega = RowMatrix::Zero(ix(s.K * s.m), ix(s.n));
  const RowMatrix noise_sq = data.noise().cwiseAbs2();
  s.xi_tilde_sq_norms.noalias() = net0.mask_matrix() * noise_sq.transpose();
  s.w0 = net0.weights();
  s.labels.assign(data.labels().begin(), data.labels().end());
  s.signal_member = partition_neurons(net0.mask()).membership;
  return s;
}

void update_coefficients(DecompState& state, const ForwardRecord& record, const MaskedNet& net, double eta) {
  if (record.iteration != state.iteration || net.iteration() != state.iteration) {
    throw ContractError("decomp: forward record (iteration " + std::to_string(record.iteration) + "), net (" +
                        std::to_string(net.iteration()) + ") and state (" + std::to_string(state.iteration) +
                        ") are not at the same iterate");
  }
  if (net.K() != state.K || net.m() != state.m || static_cast<std::size_t>(record.lprime.cols()) != state.n) {
    throw ContractError("decomp: shapes of record, net and state differ");
  }
  const std::size_t K = state.K, m = state.m, n = state.n;
  const double step = eta / static_cast<double>(n);
  const double mu_sq = state.mu * state.mu;

  const RowMatrix noise_d = net.activation().derivatives(record.noise_pre);
  RowMatrix signal_d = net.activation().derivatives(record.signal_pre);
  for (std::size_t j = 0; j < K; ++j) {
    const Index rows = ix(m), first = ix(j * m);
    const auto lp = record.lprime.row(ix(j)).array();
    const RowMatrix inc =
        ((-step * noise_d.middleRows(first, rows).array()).rowwise() * lp) * state.xi_tilde_sq_norms.middleRows(first, rows).array();
    for (std::size_t i = 0; i < n; ++i) {
      auto target = state.labels[i] == j ? state.zeta.block(first, ix(i), rows, 1) : state.omega.block(first, ix(i), rows, 1);
      target += inc.col(ix(i));
    }
    signal_d.middleRows(first, rows).array().rowwise() *= lp;
  }
  Eigen::MatrixXd by_class = Eigen::MatrixXd::Zero(ix(K * m), ix(K));
  for (std::size_t i = 0; i < n; ++i) by_class.col(ix(state.labels[i])) += signal_d.col(ix(i));

  for (std::size_t j = 0; j < K; ++j) {
    for (std::size_t r = 0; r < m; ++r) {
      const Index row = ix(j * m + r);
      for (std::size_t k = 0; k < K; ++k) {
        // k == j is the S_signal gate; k != j is the (m_{j,r})_k gate.
        if (!net.mask().bit(j, r, k)) continue;
        state.gamma(row, ix(k)) += -step * by_class(row, ix(k)) * mu_sq;
      }
    }
  }
  ++state.iteration;
}

ReconReport residual_report(const RowMatrix& reconstructed, const MaskedNet& live) {
  ReconReport rep;
  for (Index row = 0; row < reconstructed.rows(); ++row) {
    const double abs_res = (live.weights().row(row) - reconstructed.row(row)).norm();
    const double scale = live.weights().row(row).norm();
    const double rel_res = scale > 0.0 ? abs_res / scale : abs_res;
    rep.max_abs_residual = std::max(rep.max_abs_residual, abs_res);
    if (rel_res > rep.max_rel_residual) {
      rep.max_rel_residual = rel_res;
      rep.worst_j = static_cast<std::size_t>(row) / live.m();
      rep.worst_r = static_cast<std::size_t>(row) % live.m();
    }
  }
  return rep;
}

Reconstruction reconstruct(const DecompState& state, const Dataset& data, const MaskedNet& live) {
  if (live.K() != state.K || live.m() != state.m || live.d() != state.d || data.size() != state.n) {
    throw ContractError("decomp: reconstruction inputs do not match the state");
  }
  RowMatrix noise_coef(ix(state.K * state.m), ix(state.n));
  for (Index row = 0; row < noise_coef.rows(); ++row) {
    for (Index col = 0; col < noise_coef.cols(); ++col) {
      const double norm_sq = state.xi_tilde_sq_norms(row, col);
      noise_coef(row, col) = norm_sq > 0.0 ? (state.zeta(row, col) + state.omega(row, col)) / norm_sq : 0.0;
    }
  }
  RowMatrix rec = (noise_coef * data.noise()).cwiseProduct(live.mask_matrix());
  rec += state.w0;
  for (std::size_t j = 0; j < state.K; ++j) {
    for (std::size_t r = 0; r < state.m; ++r) {
      const Index row = ix(j * state.m + r);
      for (std::size_t k = 0; k < state.K; ++k) {
        if (live.mask().bit(j, r, k)) rec(row, ix(k)) += state.gamma(row, ix(k)) / state.mu;
      }
    }
  }
  Reconstruction out;
  out.report = residual_report(rec, live);
  out.weights = std::move(rec);
  return out;
}

OracleReport projection_oracle(const MaskedNet& net, const DecompState& state, const Dataset& data,
                               const std::vector<std::pair<std::size_t, std::size_t>>& neurons,
                               const OracleOptions& options) {
  OracleReport rep;
  rep.ridge = options.ridge;
  rep.tolerance = options.tolerance;
  rep.non_unique = net.mask().p() * static_cast<double>(net.d()) <= static_cast<double>(state.n + state.K);

  for (const auto& [j, r] : neurons) {
    if (j >= state.K || r >= state.m) throw ConfigError("oracle: neuron index out of range");
    OracleNeuron res;
    res.j = j;
    res.r = r;
    const Index row = ix(j * state.m + r);
    const auto mask_row = net.mask().row(j, r);
    const std::size_t nnz = static_cast<std::size_t>(std::count(mask_row.begin(), mask_row.end(), 1));

    std::vector<std::size_t> signal_dirs, noise_dirs;
    for (std::size_t k = 0; k < state.K; ++k) {
      if (mask_row[k]) signal_dirs.push_back(k);
    }
    for (std::size_t i = 0; i < state.n; ++i) {
      if (state.xi_tilde_sq_norms(row, ix(i)) > 0.0) noise_dirs.push_back(i);
    }
    res.basis_size = signal_dirs.size() + noise_dirs.size();
    res.recovered_gamma.assign(state.K, 0.0);
    res.recovered_noise.assign(state.n, 0.0);

    if (res.basis_size > 0) {
      RowMatrix basis = RowMatrix::Zero(ix(state.d), ix(res.basis_size));
      for (std::size_t b = 0; b < signal_dirs.size(); ++b) basis(ix(signal_dirs[b]), ix(b)) = state.mu;
      for (std::size_t b = 0; b < noise_dirs.size(); ++b) {
        const Index col = ix(signal_dirs.size() + b);
        for (std::size_t k = 0; k < state.d; ++k) {
          if (mask_row[k]) basis(ix(k), col) = data.noise()(ix(noise_dirs[b]), ix(k));
        }
      }
      const Eigen::VectorXd target = (net.weights().row(row) - state.w0.row(row)).transpose();
      Eigen::MatrixXd gram = basis.transpose() * basis;
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
      const double lmin = eig.eigenvalues().minCoeff();
      const double lmax = eig.eigenvalues().maxCoeff();
      res.condition = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
      res.rank_deficient = nnz < res.basis_size || !(lmin > options.rank_tolerance * lmax);
      if (!res.rank_deficient) {
        gram.diagonal().array() += options.ridge;
        const Eigen::VectorXd coef = gram.ldlt().solve(basis.transpose() * target);
        for (std::size_t b = 0; b < signal_dirs.size(); ++b) {
          res.recovered_gamma[signal_dirs[b]] = coef[ix(b)] * state.mu * state.mu;
        }
        for (std::size_t b = 0; b < noise_dirs.size(); ++b) {
          res.recovered_noise[noise_dirs[b]] =
              coef[ix(signal_dirs.size() + b)] * state.xi_tilde_sq_norms(row, ix(noise_dirs[b]));
        }
      }
    }

    if (res.rank_deficient) {
      ++rep.skipped_neurons;
    } else {
      auto compare = [&](double recovered, double tracked) {
        const double diff = std::abs(recovered - tracked);
        ++res.comparisons;
        if (diff <= options.tolerance) ++res.agreements;
        res.max_abs_diff = std::max(res.max_abs_diff, diff);
      };
      for (std::size_t k = 0; k < state.K; ++k) compare(res.recovered_gamma[k], state.gamma(row, ix(k)));
      for (std::size_t i = 0; i < state.n; ++i) {
        compare(res.recovered_noise[i], state.zeta(row, ix(i)) + state.omega(row, ix(i)));
      }
      rep.comparisons += res.comparisons;
      rep.agreements += res.agreements;
      rep.max_abs_diff = std::max(rep.max_abs_diff, res.max_abs_diff);
      if (std::isfinite(res.condition)) rep.max_condition = std::max(rep.max_condition, res.condition);
    }
    rep.neurons.push_back(std::move(res));
  }
  return rep;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_neurons(std::size_t K, std::size_t m, std::size_t count,
                                                                Rng& rng) {
  std::vector<std::size_t> all(K * m);
  std::iota(all.begin(), all.end(), std::size_t{0});
  count = std::min(count, all.size());
  // Partial Fisher-Yates.
  for (std::size_t a = 0; a < count; ++a) {
    std::uniform_int_distribution<std::size_t> pick(a, all.size() - 1);
    std::swap(all[a], all[pick(rng)]);
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(count);
  for (std::size_t a = 0; a < count; ++a) out.emplace_back(all[a] / m, all[a] % m);
  return out;
}

CoefficientSummary summarize(const DecompState& state) {
  CoefficientSummary s;
  s.class_signal.assign(state.K, 0.0);
  s.class_noise.assign(state.K, std::numeric_limits<double>::infinity());
  s.sample_noise.assign(state.n, 0.0);
  for (std::size_t j = 0; j < state.K; ++j) {
    for (std::size_t r = 0; r < state.m; ++r) {
      const Index row = ix(j * state.m + r);
      for (std::size_t k = 0; k < state.K; ++k) {
        const double g = state.gamma(row, ix(k));
        if (k == j) {
          s.class_signal[j] = std::max(s.class_signal[j], g);
        } else {
          s.max_abs_gamma_offdiag = std::max(s.max_abs_gamma_offdiag, std::abs(g));
          s.min_gamma_offdiag = std::min(s.min_gamma_offdiag, g);
        }
      }
      for (std::size_t i = 0; i < state.n; ++i) {
        const double z = state.zeta(row, ix(i));
        const double o = state.omega(row, ix(i));
        s.max_zeta = std::max(s.max_zeta, z);
        s.max_abs_omega = std::max(s.max_abs_omega, std::abs(o));
        s.min_omega = std::min(s.min_omega, o);
        if (state.labels[i] == j) s.sample_noise[i] = std::max(s.sample_noise[i], z);
      }
    }
  }
  for (std::size_t i = 0; i < state.n; ++i) {
    const std::size_t y = state.labels[i];
    s.class_noise[y] = std::min(s.class_noise[y], s.sample_noise[i]);
  }
  for (double& v : s.class_noise) {
    if (!std::isfinite(v)) v = 0.0;  // class absent from the sample
  }
  s.max_gamma_diag = s.class_signal.empty() ? 0.0 : *std::max_element(s.class_signal.begin(), s.class_signal.end());
  return s;
}

std::vector<std::string> invariant_violations(const DecompState& state, const Mask& mask) {
  std::vector<std::string> out;
  auto where = [](const char* what, std::size_t j, std::size_t r, std::size_t idx) {
    return std::string(what) + " at j=" + std::to_string(j) + " r=" + std::to_string(r) + " idx=" + std::to_string(idx);
  };
  for (std::size_t j = 0; j < state.K; ++j) {
    for (std::size_t r = 0; r < state.m; ++r) {
      const Index row = ix(j * state.m + r);
      for (std::size_t k = 0; k < state.K; ++k) {
        const double g = state.gamma(row, ix(k));
        if (k == j && g < 0.0) out.push_back(where("negative gamma_diag", j, r, k));
        if (k != j && g > 0.0) out.push_back(where("positive gamma_offdiag", j, r, k));
        if (!mask.bit(j, r, k) && g != 0.0) out.push_back(where("gamma on pruned signal coordinate", j, r, k));
      }
      for (std::size_t i = 0; i < state.n; ++i) {
        const double z = state.zeta(row, ix(i));
        const double o = state.omega(row, ix(i));
        if (z < 0.0) out.push_back(where("negative zeta", j, r, i));
        if (o > 0.0) out.push_back(where("positive omega", j, r, i));
        if (state.labels[i] != j && z != 0.0) out.push_back(where("zeta off its class", j, r, i));
        if (state.labels[i] == j && o != 0.0) out.push_back(where("omega on its class", j, r, i));
      }
    }
  }
  return out;
}

std::vector<std::string> monotonicity_violations(const DecompState& before, const DecompState& after) {
  std::vector<std::string> out;
  if (before.gamma.rows() != after.gamma.rows() || before.zeta.cols() != after.zeta.cols()) {
    out.emplace_back("state shapes differ");
    return out;
  }
  for (std::size_t j = 0; j < before.K; ++j) {
    for (std::size_t r = 0; r < before.m; ++r) {
      const Index row = ix(j * before.m + r);
      for (std::size_t k = 0; k < before.K; ++k) {
        const double delta = after.gamma(row, ix(k)) - before.gamma(row, ix(k));
        if (k == j ? delta < 0.0 : delta > 0.0) {
          out.push_back("gamma moved the wrong way at j=" + std::to_string(j) + " r=" + std::to_string(r) +
                        " k=" + std::to_string(k));
        }
      }
      for (std::size_t i = 0; i < before.n; ++i) {
        if (after.zeta(row, ix(i)) < before.zeta(row, ix(i))) {
          out.push_back("zeta decreased at j=" + std::to_string(j) + " r=" + std::to_string(r) + " i=" + std::to_string(i));
        }
        if (after.omega(row, ix(i)) > before.omega(row, ix(i))) {
          out.push_back("omega increased at j=" + std::to_string(j) + " r=" + std::to_string(r) + " i=" + std::to_string(i));
        }
      }
    }
  }
  return out;
}

PropReport coefficient_bounds_check(const DecompState& state, const Dataset& data, const BoundsConfig& cfg) {
  PropReport rep;
  const double q = static_cast<double>(cfg.q);
  rep.alpha = cfg.alpha.value_or(cfg.alpha_multiplier *
                                 std::pow(std::log(std::max<double>(static_cast<double>(cfg.t_max), 2.0)), 1.0 / q));

  const RowMatrix w0_noise = state.w0 * data.noise().transpose();
  double beta_half = w0_noise.cwiseAbs().maxCoeff();
  for (std::size_t k = 0; k < state.K; ++k) {
    beta_half = std::max(beta_half, state.mu * state.w0.col(ix(k)).cwiseAbs().maxCoeff());
  }
  rep.beta = 2.0 * beta_half;

  const CoefficientSummary s = summarize(state);
  rep.max_gamma_diag = s.max_gamma_diag;
  rep.max_zeta = s.max_zeta;
  rep.min_omega = s.min_omega;
  rep.min_gamma_offdiag = s.min_gamma_offdiag;
  rep.upper_ok = rep.max_gamma_diag <= rep.alpha && rep.max_zeta <= rep.alpha;

  const double n = static_cast<double>(state.n);
  const double d = static_cast<double>(state.d);
  const double log_d = std::log(d);
  const double pd = cfg.p * d;
  if (pd > 0.0) {
    rep.omega_lower = -rep.beta - 6.0 * cfg.C * n * rep.alpha * std::sqrt(log_d / pd);
    rep.omega_ok = rep.min_omega >= *rep.omega_lower;
    if (cfg.sigma_n > 0.0) {
      rep.gamma_offdiag_lower = -rep.beta - 2.0 * cfg.C * n * rep.alpha * state.mu * std::sqrt(log_d) / (cfg.sigma_n * pd);
      rep.gamma_offdiag_ok = rep.min_gamma_offdiag >= *rep.gamma_offdiag_lower;
    }
  }
  return rep;
}

void write_coefficients_csv(std::ostream& out, const DecompState& state, bool header) {
  if (header) out << "t,j,r,k_or_i,kind,value\n";
  char buf[32];
  auto value = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (std::size_t j = 0; j < state.K; ++j) {
    for (std::size_t r = 0; r < state.m; ++r) {
      const Index row = ix(j * state.m + r);
      for (std::size_t k = 0; k < state.K; ++k) {
        out << state.iteration << ',' << j << ',' << r << ',' << k << ",gamma," << value(state.gamma(row, ix(k))) << '\n';
      }
      for (std::size_t i = 0; i < state.n; ++i) {
        if (state.labels[i] == j) {
          out << state.iteration << ',' << j << ',' << r << ',' << i << ",zeta," << value(state.zeta(row, ix(i))) << '\n';
        } else {
          out << state.iteration << ',' << j << ',' << r << ',' << i << ",omega," << value(state.omega(row, ix(i))) << '\n';
        }
      }
    }
  }
}

}  // namespace prunelab
