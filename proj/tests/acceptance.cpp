// Acceptance suite: one PASS/FAIL line per criterion, INFO lines for context.
// Exits non-zero when any criterion fails.

#include "oracles.hpp"
#include "prunelab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

using namespace prunelab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::filesystem::path g_out = "acceptance_out";
std::size_t g_threads = 1;
double g_max_ratio = 0.0;  // largest gradient-certificate ratio seen on any run
std::string g_ratio_where;

void info(const std::string& s) { std::printf("INFO %s\n", s.c_str()); std::fflush(stdout); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note_ratio(const TrainTrace& trace, const std::string& where) {
  if (trace.max_bound_ratio > g_max_ratio) {
    g_max_ratio = trace.max_bound_ratio;
    g_ratio_where = where;
  }
}

void save_cells(const std::filesystem::path& path, const std::vector<SweepCell>& cells) {
  std::ofstream out(path);
  write_cells_csv(out, cells);
}

std::size_t column(const std::string& name) {
  const auto& cols = aggregate_columns();
  return static_cast<std::size_t>(std::find(cols.begin(), cols.end(), name) - cols.begin());
}

const AggregateRow* row_at(const std::vector<AggregateRow>& rows, double retention) {
  for (const auto& r : rows)
    if (std::abs(r.p - retention) < 1e-9) return &r;
  return nullptr;
}

struct Fig3 {
  SweepResult result;
  double seconds = 0.0;
};

Fig3 run_fig3(const std::string& preset) {
  auto cfg = make_preset(preset);
  auto start = std::chrono::steady_clock::now();
  Fig3 f{run_sweep(cfg, g_threads), 0.0};
  f.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  emit_sweep(f.result, cfg, g_out / preset);
  const std::size_t tr = column("train_err"), te = column("test_err");
  for (const auto& r : f.result.aggregates)
    info(fmt("%s pruned_fraction=%.1f train_err=%.4f+-%.4f test_err=%.4f+-%.4f cells=%zu", preset.c_str(), 1.0 - r.p,
             r.mean[tr], r.stddev[tr], r.mean[te], r.stddev[te], r.cells));
  for (const auto& c : f.result.cells) note_ratio(c.trace, preset);
  return f;
}

Outcome fig3a() {
  auto f = run_fig3("fig3a");
  const auto& rows = f.result.aggregates;
  const std::size_t tr = column("train_err"), te = column("test_err");
  double worst_train = 0.0;
  for (const auto& r : rows)
    if (1.0 - r.p <= 0.9 + 1e-9) worst_train = std::max(worst_train, r.mean[tr]);
  const auto* heavy = row_at(rows, 0.1);
  const auto* light = row_at(rows, 0.7);
  if (!heavy || !light) return {false, "grid lacks pruned fractions 0.9 / 0.3"};
  const double gap = heavy->mean[te] - light->mean[te];
  const bool ok = worst_train <= 0.01 && gap >= 0.05 && f.seconds <= 600.0;
  return {ok, fmt("max mean train_err=%.4f (<=0.01); test_err(0.9)-test_err(0.3)=%.4f (>=0.05); runtime=%.0fs (<=600)",
                  worst_train, gap, f.seconds)};
}

Outcome fig3b() {
  auto f = run_fig3("fig3b");
  const auto& rows = f.result.aggregates;
  const std::size_t te = column("test_err");
  const auto* dense = row_at(rows, 1.0);
  if (!dense) return {false, "grid lacks the dense point"};
  double best = 1.0, best_frac = -1.0;
  for (const auto& r : rows) {
    const double frac = 1.0 - r.p;
    if (frac <= 1e-9 || frac >= 0.9 - 1e-9) continue;  // interior only
    if (r.mean[te] < best) {
      best = r.mean[te];
      best_frac = frac;
    }
  }
  const double margin = dense->mean[te] - best;
  return {margin >= 0.01, fmt("dense test_err=%.4f; best interior test_err=%.4f at pruned fraction %.1f; margin=%.4f (>=0.01)",
                              dense->mean[te], best, best_frac, margin)};
}

ExperimentConfig acceptance_theory(const std::string& preset) {
  auto cfg = make_preset(preset);
  cfg.train.check_invariants = true;
  return cfg;
}

Outcome mild_run() {
  auto cfg = acceptance_theory("mild_theory");
  const double thr = std::pow(static_cast<double>(cfg.model.m), -1.0 / 3.0);
  std::size_t passed = 0;
  std::string worst;
  CellOptions opts;
  opts.keep_decomp = true;
  std::vector<SweepCell> cells;
  for (auto seed : cfg.sweep.seeds) {
    auto r = run_cell(cfg, cfg.pruning.p, cfg.data.sigma_n, seed, opts);
    note_ratio(r.trace, "mild_theory");
    cells.push_back(r.cell);
    if (!r.cell.has_outcomes || !r.decomp) {
      worst += fmt(" seed %llu: error %s;", static_cast<unsigned long long>(seed), r.error.c_str());
      continue;
    }
    const auto s = summarize(*r.decomp);
    const double min_class = *std::min_element(s.class_signal.begin(), s.class_signal.end());
    const bool ok = r.cell.termination == "loss_below_epsilon" && min_class >= thr &&
                    s.max_zeta <= 0.2 * s.max_gamma_diag && s.max_abs_omega <= 0.2 * s.max_gamma_diag &&
                    r.cell.test_err <= 0.05 && r.trace.invariant_violations == 0;
    passed += ok;
    info(fmt("mild_theory seed=%llu t=%llu loss=%.4g min_class_gamma=%.4f max_zeta=%.4f max_abs_omega=%.4f "
             "max_gamma=%.4f test_err=%.4f violations=%zu %s",
             static_cast<unsigned long long>(seed), static_cast<unsigned long long>(r.trace.final_iteration),
             r.cell.train_loss, min_class, s.max_zeta, s.max_abs_omega, s.max_gamma_diag, r.cell.test_err,
             r.trace.invariant_violations, ok ? "ok" : "FAILED"));
  }
  save_cells(g_out / "mild_theory_cells.csv", cells);
  return {passed == cfg.sweep.seeds.size(),
          fmt("%zu/%zu seeds: loss<=1e-2, every class max_r gamma_jrj>=%.4f, zeta and |omega| <= 0.2 max gamma, "
              "test_err<=0.05%s",
              passed, cfg.sweep.seeds.size(), thr, worst.c_str())};
}

Outcome over_run() {
  auto cfg = acceptance_theory("over_theory");
  const double thr = std::pow(static_cast<double>(cfg.model.m), -1.0 / 3.0);
  const double loss_floor = 0.9 * std::log(static_cast<double>(cfg.data.K));
  std::size_t passed = 0;
  CellOptions opts;
  opts.keep_decomp = true;
  std::vector<SweepCell> cells;
  for (auto seed : cfg.sweep.seeds) {
    auto r = run_cell(cfg, cfg.pruning.p, cfg.data.sigma_n, seed, opts);
    note_ratio(r.trace, "over_theory");
    cells.push_back(r.cell);
    if (!r.cell.has_outcomes || !r.decomp) {
      info(fmt("over_theory seed=%llu error: %s", static_cast<unsigned long long>(seed), r.error.c_str()));
      continue;
    }
    // Per-step gating is asserted by the invariant checker; logged rows and the final state are re-read here.
    bool gamma_zero = r.trace.invariant_violations == 0;
    for (const auto& row : r.trace.rows) {
      gamma_zero = gamma_zero && row.max_gamma_diag == 0.0;
      for (double v : row.class_signal) gamma_zero = gamma_zero && v == 0.0;
    }
    const auto& st = *r.decomp;
    for (std::size_t j = 0; j < st.K; ++j)
      for (std::size_t q = 0; q < st.m; ++q) gamma_zero = gamma_zero && st.gamma_at(j, q, j) == 0.0;
    const auto s = summarize(st);
    const double min_sample = *std::min_element(s.sample_noise.begin(), s.sample_noise.end());
    const bool ok = r.cell.termination == "loss_below_epsilon" && gamma_zero && min_sample >= thr &&
                    r.cell.test_loss >= loss_floor;
    passed += ok;
    info(fmt("over_theory seed=%llu t=%llu loss=%.4g gamma_diag_zero=%d min_i max_r zeta=%.4f test_loss=%.4f "
             "test_err=%.4f rejection_attempts=%llu %s",
             static_cast<unsigned long long>(seed), static_cast<unsigned long long>(r.trace.final_iteration),
             r.cell.train_loss, gamma_zero ? 1 : 0, min_sample, r.cell.test_loss, r.cell.test_err,
             static_cast<unsigned long long>(r.rejection_attempts), ok ? "ok" : "FAILED"));
  }
  save_cells(g_out / "over_theory_cells.csv", cells);
  return {passed == cfg.sweep.seeds.size(),
          fmt("%zu/%zu seeds: loss<=1e-2, gamma_jrj==0 bitwise, every sample max_r zeta>=%.4f, L_D>=%.4f", passed,
              cfg.sweep.seeds.size(), thr, loss_floor)};
}

Outcome exactness() {
  std::string detail;
  bool ok = true;
  auto check = [&](const std::string& name, ExperimentConfig cfg, double p, double sigma_n) {
    cfg.train.t_max = 1000;
    cfg.train.log_every = 1;
    cfg.train.epsilon = 1e-300;
    cfg.train.track_decomposition = true;
    cfg.diagnostics.enabled = false;
    auto r = run_cell(cfg, p, sigma_n, 0);
    note_ratio(r.trace, name);
    const bool full = r.trace.final_iteration == 1000 && r.trace.rows.size() == 1001;
    const bool good = full && r.trace.max_recon_residual <= 1e-6 && r.trace.max_residual_growth <= 1e-12;
    ok = ok && good;
    detail += fmt("%s: steps=%llu max_residual=%.3g growth=%.3g; ", name.c_str(),
                  static_cast<unsigned long long>(r.trace.final_iteration), r.trace.max_recon_residual,
                  r.trace.max_residual_growth);
    std::ofstream out(g_out / (name + "_trace.csv"));
    write_trace_csv(out, r.trace);
  };
  auto fig = make_preset("fig3c");
  check("fig3c_relu", fig, 0.5, 1.0);
  auto mild = make_preset("mild_theory");
  check("mild_poly3", mild, 0.5, mild.data.sigma_n);
  return {ok, detail + "bounds 1e-6 / 1e-12"};
}

Outcome oracle_equivalence() {
  auto cfg = make_preset("mild_theory");
  auto setup = prepare_cell(cfg, cfg.pruning.p, cfg.data.sigma_n, 0);
  MaskedNet net = setup.net0;
  auto state = init_decomp(net, setup.train);
  TrainConfig tc = cfg.train;
  tc.track_decomposition = true;
  tc.log_every = 1000;
  auto rng = make_stream(0, Stream::monte_carlo);
  std::size_t comparisons = 0, agreements = 0, checkpoints = 0, neurons = 0;
  double worst = 0.0, cond = 0.0;
  bool non_unique = false;
  for (std::uint64_t until : {40, 80, 100000}) {
    tc.t_max = until - net.iteration();
    auto trace = train(net, setup.train, tc, &state);
    note_ratio(trace, "oracle");
    auto picks = sample_neurons(net.K(), net.m(), 50, rng);
    auto rep = projection_oracle(net, state, setup.train, picks);
    ++checkpoints;
    neurons += picks.size();
    comparisons += rep.comparisons;
    agreements += rep.agreements;
    worst = std::max(worst, rep.max_abs_diff);
    cond = std::max(cond, rep.max_condition);
    non_unique = non_unique || rep.non_unique;
    info(fmt("oracle checkpoint t=%llu neurons=%zu agreement=%.4f max_abs_diff=%.3g max_gram_condition=%.3g",
             static_cast<unsigned long long>(net.iteration()), picks.size(), rep.agreement_rate(), rep.max_abs_diff,
             rep.max_condition));
  }
  const double rate = comparisons ? static_cast<double>(agreements) / static_cast<double>(comparisons) : 0.0;
  const bool ok = !non_unique && checkpoints >= 3 && neurons >= 150 && rate >= 0.99;
  return {ok, fmt("%zu checkpoints x 50 neurons, %zu comparisons, agreement=%.4f (>=0.99 within 1e-6), "
                  "max_abs_diff=%.3g, max_gram_condition=%.3g",
                  checkpoints, comparisons, rate, worst, cond)};
}

double max_rel(const RowMatrix& a, const RowMatrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index k = 0; k < a.cols(); ++k)
      if (std::abs(b(i, k)) > 1e-8) worst = std::max(worst, std::abs(a(i, k) - b(i, k)) / std::abs(b(i, k)));
  return worst;
}

Outcome gradient_correctness() {
  const double h = 1e-5;
  auto poly = oracle::tiny_problem(2, 3, 10, 4, 0.8, Activation::poly(3), 0.5, 1.0, 1);
  const double e_poly = max_rel(loss_and_grad(poly.net, poly.data).grad, oracle::finite_difference(poly.net, poly.data, h));
  double e_relu = 1.0;
  std::uint64_t seed = 1;
  for (; seed < 1000; ++seed) {
    auto relu = oracle::tiny_problem(2, 3, 10, 4, 0.8, Activation::relu(), 0.5, 1.0, seed);
    if (oracle::min_abs_preactivation(relu.net, relu.data) <= 10 * h) continue;
    e_relu = max_rel(loss_and_grad(relu.net, relu.data).grad, oracle::finite_difference(relu.net, relu.data, h));
    break;
  }
  return {e_poly <= 1e-5 && e_relu <= 1e-5,
          fmt("max relative error poly3=%.3g relu=%.3g (relu instance seed %llu) (<=1e-5, h=1e-5)", e_poly, e_relu,
              static_cast<unsigned long long>(seed))};
}

Outcome gradient_bound() {
  return {g_max_ratio <= 100.0, fmt("max ratio over all acceptance runs=%.4g (at %s) (<=100)", g_max_ratio,
                                    g_ratio_where.c_str())};
}

Outcome invariant_suite() {
  std::vector<std::string> failures;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) failures.push_back(what);
  };
  auto cfg = acceptance_theory("mild_theory");
  CellOptions opts;
  opts.keep_net = opts.keep_decomp = true;
  auto a = run_cell(cfg, cfg.pruning.p, cfg.data.sigma_n, 1, opts);
  auto b = run_cell(cfg, cfg.pruning.p, cfg.data.sigma_n, 1, opts);
  note_ratio(a.trace, "invariants");
  expect(a.net.has_value() && b.net.has_value(), "runs kept their nets");
  if (!failures.empty()) return {false, failures.front()};

  auto setup = prepare_cell(cfg, cfg.pruning.p, cfg.data.sigma_n, 1);
  for (const MaskedNet* net : {&setup.net0, &*a.net}) {
    for (const Dataset* data : {&setup.train, &setup.eval}) {
      auto rec = forward(*net, *data);
      double norm_err = 0.0, sum_err = 0.0, abs_err = 0.0;
      bool ranges = true;
      for (std::size_t i = 0; i < data->size(); ++i) {
        const auto y = data->label(i);
        const auto col = static_cast<Eigen::Index>(i);
        norm_err = std::max(norm_err, std::abs(rec.logits.col(col).sum() - 1.0));
        sum_err = std::max(sum_err, std::abs(rec.lprime.col(col).sum()));
        double others = 0.0;
        for (std::size_t j = 0; j < net->K(); ++j) {
          const double v = rec.lprime(static_cast<Eigen::Index>(j), col);
          if (j == y) ranges = ranges && v >= -1.0 && v <= 0.0;
          else {
            ranges = ranges && v >= 0.0 && v <= 1.0;
            others += std::abs(v);
          }
        }
        abs_err = std::max(abs_err, std::abs(others - std::abs(rec.lprime(static_cast<Eigen::Index>(y), col))));
      }
      expect(norm_err <= 1e-12, fmt("softmax normalization off by %.3g", norm_err));
      expect(sum_err <= 1e-12, fmt("sum_j l' off by %.3g", sum_err));
      expect(abs_err <= 1e-12, fmt("l' magnitude identity off by %.3g", abs_err));
      expect(ranges, "l' outside its sign ranges");
    }
  }

  expect(a.trace.invariant_violations == 0,
         "coefficient sign/monotonicity/gating: " +
             (a.trace.first_violations.empty() ? std::string() : a.trace.first_violations.front()));

  const MaskedNet& net = *a.net;
  const RowMatrix off = (1.0 - net.mask_matrix().array()).matrix();
  expect((net.weights().array() * off.array() == 0.0).all(), "trained weights leak onto pruned coordinates");
  expect((loss_and_grad(net, setup.train).grad.array() * off.array() == 0.0).all(), "gradient leaks onto pruned coordinates");
  expect(a.mask_hash_before == a.mask_hash_after, "mask changed during training");

  double homog = 0.0;
  for (double c : {0.5, 2.0, 3.0}) {
    auto scaled = net.scaled(c);
    for (std::size_t i = 0; i < 50; ++i) {
      auto s = setup.eval.sample(i);
      auto f = network_outputs(net, s.x1, s.x2), g = network_outputs(scaled, s.x1, s.x2);
      for (Eigen::Index j = 0; j < f.size(); ++j) {
        const double want = std::pow(c, 3) * f(j);
        if (want != 0.0) homog = std::max(homog, std::abs(g(j) - want) / std::abs(want));
      }
    }
  }
  expect(homog <= 1e-10, fmt("q-homogeneity off by %.3g", homog));

  std::ostringstream ta, tb, ca, cb;
  write_trace_csv(ta, a.trace);
  write_trace_csv(tb, b.trace);
  write_cells_csv(ca, {a.cell});
  write_cells_csv(cb, {b.cell});
  expect(ta.str() == tb.str() && ca.str() == cb.str() && a.net->weights() == b.net->weights(),
         "re-run is not bit-identical");

  auto grid = make_preset("fig3a");
  grid.sweep.p_values = {0.3, 0.7, 1.0};
  grid.sweep.seeds = {0, 1};
  grid.train.t_max = 200;
  auto one = run_sweep(grid, 1), many = run_sweep(grid, 4);
  std::ostringstream s1, s4, d1, d4;
  std::vector<SweepCell> c1, c4;
  for (auto& r : one.cells) {
    c1.push_back(r.cell);
    for (auto& d : r.diagnostics) d1 << d.to_json() << '\n';
  }
  for (auto& r : many.cells) {
    c4.push_back(r.cell);
    for (auto& d : r.diagnostics) d4 << d.to_json() << '\n';
  }
  write_cells_csv(s1, c1);
  write_cells_csv(s4, c4);
  write_aggregates_csv(s1, one.aggregates);
  write_aggregates_csv(s4, many.aggregates);
  expect(s1.str() == s4.str() && d1.str() == d4.str(), "outputs depend on the thread count");

  std::string detail = "softmax, l' identities, coefficient sign/monotonicity/gating, mask closure, "
                       "q-homogeneity, re-run and 1-vs-4-thread determinism";
  if (!failures.empty()) {
    detail = "violated:";
    for (auto& f : failures) detail += " [" + f + "]";
  }
  return {failures.empty(), detail};
}

Outcome informational_concentration() {
  // Reported for context; the bound is not a pass/fail criterion here.
  auto cfg = make_preset("mild_theory");
  CellOptions opts;
  opts.keep_net = true;
  for (double p : {cfg.pruning.p, cfg.pruning.p / 2}) {
    auto r = run_cell(cfg, p, cfg.data.sigma_n, 0, opts);
    if (!r.net) continue;
    auto rep = check_test_noise_concentration(*r.net, cfg.data, {.n_mc = 2000, .C = cfg.diagnostics.C, .seed = 0});
    info(fmt("test-noise concentration at p=%.3f: probability=%.4f (threshold %.4f, max |corr| %.4f)", p,
             rep.measured_at("probability"), rep.measured_at("threshold"), rep.measured_at("max_abs_correlation")));
  }
  return {true, ""};
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  if (argc > 1) g_out = argv[1];
  std::filesystem::create_directories(g_out);
  g_threads = std::max(1u, std::thread::hardware_concurrency());
  info(fmt("threads=%zu output=%s", g_threads, g_out.string().c_str()));

  // The certificate criterion reads the ratios collected by the runs before it.
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient_correctness", gradient_correctness},
      {"decomposition_exactness", exactness},
      {"oracle_equivalence", oracle_equivalence},
      {"mild_pruning_run", mild_run},
      {"over_pruning_run", over_run},
      {"invariant_suite", invariant_suite},
      {"fig3a_reproduction", fig3a},
      {"fig3b_reproduction", fig3b},
      {"gradient_bound_certificate", gradient_bound},
  };
  std::size_t failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  informational_concentration();
  std::printf("SUMMARY %zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
