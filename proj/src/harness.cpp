#include "prunelab/harness.hpp"

#include "prunelab/pruner.hpp"
#include "prunelab/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

namespace prunelab {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ExperimentConfig fig3_base(double sigma_n) {
  ExperimentConfig c;
  c.data = DataConfig{2, 400, 100, 1.0, sigma_n, 0};
  c.n_eval = 100;
  c.model = ModelConfig{150, 0.1, "relu", 1};
  c.pruning.p = 1.0;
  c.train.eta = 0.001;
  c.train.epsilon = 1e-10;  // run the full 1000 iterations
  c.train.t_max = 1000;
  c.train.log_every = 10;
  c.train.track_decomposition = true;
  for (int k = 0; k <= 9; ++k) c.sweep.p_values.push_back(std::round((1.0 - 0.1 * k) * 1e12) / 1e12);
  c.sweep.sigma_n_values = {sigma_n};
  for (std::uint64_t s = 0; s < 10; ++s) c.sweep.seeds.push_back(s);
  c.sweep.pruned_fraction_axis = true;
  return c;
}

ExperimentConfig theory_base() {
  ExperimentConfig c;
  c.data = DataConfig{4, 2000, 64, 1.0, 0.05, 0};
  c.n_eval = 1000;
  c.model = ModelConfig{64, 0.01, "poly", 3};
  c.train.epsilon = 1e-2;
  c.train.log_every = 10;
  c.train.track_decomposition = true;
  c.sweep.sigma_n_values = {0.05};
  for (std::uint64_t s = 0; s < 5; ++s) c.sweep.seeds.push_back(s);
  return c;
}

}  // namespace

std::vector<std::string> preset_names() { return {"fig3a", "fig3b", "fig3c", "mild_theory", "over_theory", "custom"}; }

ExperimentConfig make_preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "fig3a") {
    c = fig3_base(0.5);
  } else if (name == "fig3b") {
    c = fig3_base(1.0);
  } else if (name == "fig3c") {
    // One training curve at pruned fraction 0.5 under high noise.
    c = fig3_base(1.0);
    c.pruning.p = 0.5;
    c.train.log_every = 1;
    c.sweep.p_values = {0.5};
    c.sweep.seeds = {0};
  } else if (name == "mild_theory") {
    c = theory_base();
    c.pruning.p = 0.5;
    c.train.eta = 1.0;
    c.train.t_max = 20000;
    c.train.phase_mode = PhaseMode::signal;
    c.sweep.p_values = {0.5};
  } else if (name == "over_theory") {
    c = theory_base();
    c.pruning.p = 0.05;
    c.pruning.reject_signal = true;
    c.train.eta = 4.0;
    c.train.t_max = 50000;
    c.train.phase_mode = PhaseMode::noise;
    c.sweep.p_values = {0.05};
  } else if (name == "custom") {
    c.sweep.p_values = {c.pruning.p};
    c.sweep.sigma_n_values = {c.data.sigma_n};
    c.sweep.seeds = {0};
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  c.preset = name;
  c.validate();
  return c;
}

CellSetup prepare_cell(const ExperimentConfig& base, double p, double sigma_n, std::uint64_t seed) {
  ExperimentConfig cfg = base;
  cfg.pruning.p = p;
  cfg.data.sigma_n = sigma_n;
  cfg.data.seed = seed;
  cfg.validate();
  const DataConfig& dc = cfg.data;

  Dataset train = generate_dataset(dc);
  Dataset eval = fresh_eval_set(dc, cfg.n_eval);

  Rng mask_rng = make_stream(seed, Stream::mask);
  std::uint64_t attempts = 0;
  std::optional<Mask> mask;
  if (cfg.pruning.reject_signal) {
    RejectionResult rr =
        sample_mask_without_signal(dc.K, cfg.model.m, dc.d, p, mask_rng, seed, cfg.pruning.max_attempts);
    attempts = rr.attempts;
    mask.emplace(std::move(rr.mask));
  } else {
    mask.emplace(sample_mask(dc.K, cfg.model.m, dc.d, p, mask_rng, seed));
  }
  Rng init_rng = make_stream(seed, Stream::init);
  MaskedNet net0 = init_weights(dc.K, cfg.model.m, dc.d, cfg.model.sigma0, *mask, cfg.model.make_activation(), init_rng);
  return CellSetup{std::move(cfg), std::move(train), std::move(eval), std::move(net0), attempts};
}

CellResult run_cell(const ExperimentConfig& base, double p, double sigma_n, std::uint64_t seed,
                    const CellOptions& opts) {
  CellResult res;
  res.cell.p = p;
  res.cell.sigma_n = sigma_n;
  res.cell.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    CellSetup setup = prepare_cell(base, p, sigma_n, seed);
    const ExperimentConfig& cfg = setup.config;
    res.rejection_attempts = setup.rejection_attempts;
    res.mask_hash_before = setup.net0.mask().hash();

    if (cfg.diagnostics.enabled) {
      res.diagnostics.push_back(check_init_correlations(setup.net0, setup.train));
      res.diagnostics.push_back(check_class_balance(setup.train));
      res.diagnostics.push_back(
          check_noise_geometry(setup.net0.mask(), setup.train, NoiseGeometryOptions{cfg.diagnostics.noise_samples, seed}));
      ConditionInputs in{cfg.data.K, cfg.data.d, cfg.data.n, cfg.model.m, cfg.data.mu, cfg.data.sigma_n,
                         cfg.model.sigma0, cfg.train.eta, cfg.train.epsilon, p, cfg.model.make_activation().degree(),
                         cfg.train.t_max};
      ConditionConstants cc;
      cc.C = cfg.diagnostics.C;
      cc.alpha_multiplier = cfg.diagnostics.alpha_multiplier;
      res.diagnostics.push_back(validate_condition_set(in, cc, &setup.net0, &setup.train));
    }

    MaskedNet net = setup.net0;
    std::optional<DecompState> decomp;
    if (cfg.train.track_decomposition) decomp = init_decomp(net, setup.train);
    res.trace = train(net, setup.train, cfg.train, decomp ? &*decomp : nullptr);
    res.mask_hash_after = net.mask().hash();

    SweepCell& c = res.cell;
    c.termination = termination_name(res.trace.termination);
    if (res.trace.termination != Termination::numeric_error && !res.trace.rows.empty()) {
      const TraceRow& last = res.trace.rows.back();
      c.has_outcomes = true;
      c.train_loss = last.train_loss;
      c.train_err = last.train_err;
      const EvalMetrics em = eval_metrics(net, setup.eval);
      c.test_loss = em.loss;
      c.test_err = em.error_rate;
      c.T1 = res.trace.overall_t1();
      c.max_gamma_diag = last.max_gamma_diag;
      c.max_zeta = last.max_zeta;
      c.recon_residual = last.recon_residual;

      if (cfg.diagnostics.enabled) {
        res.diagnostics.push_back(check_grad_bound(net, setup.train, cfg.diagnostics.grad_ceiling));
        res.diagnostics.push_back(check_test_noise_concentration(
            net, cfg.data, ConcentrationOptions{cfg.diagnostics.n_mc, cfg.diagnostics.C, seed}));
        res.diagnostics.push_back(check_generalization_gap(net, setup.eval, GapOptions{cfg.train.epsilon, p, cfg.data.n}));
      }
    } else {
      res.error = res.trace.error;
    }
    if (opts.keep_net) res.net.emplace(std::move(net));
    if (opts.keep_decomp && decomp) res.decomp = std::move(decomp);
  } catch (const std::exception& e) {
    res.cell.termination = "error";
    res.cell.has_outcomes = false;
    res.error = e.what();
  }
  if (opts.timing) {
    res.cell.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return res;
}

const std::vector<std::string>& aggregate_columns() {
  static const std::vector<std::string> cols = {"train_loss", "train_err",      "test_loss", "test_err",
                                                "T1",         "max_gamma_diag", "max_zeta",  "recon_residual",
                                                "wall_time_s"};
  return cols;
}

std::vector<AggregateRow> aggregate(const std::vector<SweepCell>& cells) {
  std::vector<AggregateRow> rows;
  std::size_t a = 0;
  const std::size_t ncol = aggregate_columns().size();
  while (a < cells.size()) {
    std::size_t b = a;
    while (b < cells.size() && cells[b].p == cells[a].p && cells[b].sigma_n == cells[a].sigma_n) ++b;
    AggregateRow row;
    row.p = cells[a].p;
    row.sigma_n = cells[a].sigma_n;
    std::vector<std::vector<double>> values(ncol);
    for (std::size_t k = a; k < b; ++k) {
      const SweepCell& c = cells[k];
      if (!c.has_outcomes) continue;
      ++row.cells;
      const double v[] = {c.train_loss,
                          c.train_err,
                          c.test_loss,
                          c.test_err,
                          c.T1 ? static_cast<double>(*c.T1) : std::numeric_limits<double>::quiet_NaN(),
                          c.max_gamma_diag,
                          c.max_zeta,
                          c.recon_residual,
                          c.wall_time_s};
      for (std::size_t col = 0; col < ncol; ++col) {
        if (std::isfinite(v[col])) values[col].push_back(v[col]);
      }
    }
    row.t1_cells = values[4].size();
    for (const auto& vs : values) {
      if (vs.empty()) {
        row.mean.push_back(std::numeric_limits<double>::quiet_NaN());
        row.stddev.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      double mean = 0.0;
      for (double v : vs) mean += v;
      mean /= static_cast<double>(vs.size());
      double ss = 0.0;
      for (double v : vs) ss += (v - mean) * (v - mean);
      row.mean.push_back(mean);
      row.stddev.push_back(vs.size() > 1 ? std::sqrt(ss / static_cast<double>(vs.size() - 1)) : 0.0);
    }
    rows.push_back(std::move(row));
    a = b;
  }
  return rows;
}

SweepResult run_sweep(const ExperimentConfig& cfg, std::size_t threads, const CellOptions& opts) {
  cfg.validate();
  struct Job {
    double p, sigma_n;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  const std::vector<double> sigmas = cfg.sweep.sigma_n_values.empty() ? std::vector<double>{cfg.data.sigma_n}
                                                                      : cfg.sweep.sigma_n_values;
  const std::vector<double> ps = cfg.sweep.p_values.empty() ? std::vector<double>{cfg.pruning.p} : cfg.sweep.p_values;
  const std::vector<std::uint64_t> seeds =
      cfg.sweep.seeds.empty() ? std::vector<std::uint64_t>{cfg.data.seed} : cfg.sweep.seeds;
  for (double p : ps) {
    for (double s : sigmas) {
      for (std::uint64_t seed : seeds) jobs.push_back({p, s, seed});
    }
  }
  std::sort(jobs.begin(), jobs.end(), [](const Job& x, const Job& y) {
    return std::tie(x.p, x.sigma_n, x.seed) < std::tie(y.p, y.sigma_n, y.seed);
  });

  SweepResult out;
  out.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next.fetch_add(1); k < jobs.size(); k = next.fetch_add(1)) {
      out.cells[k] = run_cell(cfg, jobs[k].p, jobs[k].sigma_n, jobs[k].seed, opts);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::vector<SweepCell> cells;
  cells.reserve(out.cells.size());
  for (const auto& c : out.cells) cells.push_back(c.cell);
  out.aggregates = aggregate(cells);
  return out;
}

void write_cells_csv(std::ostream& out, const std::vector<SweepCell>& cells) {
  out << "p,sigma_n,seed,train_loss,train_err,test_loss,test_err,T1,max_gamma_diag,max_zeta,recon_residual,"
         "wall_time_s,termination\n";
  for (const SweepCell& c : cells) {
    out << fmt(c.p) << ',' << fmt(c.sigma_n) << ',' << c.seed << ',';
    if (c.has_outcomes) {
      out << fmt(c.train_loss) << ',' << fmt(c.train_err) << ',' << fmt(c.test_loss) << ',' << fmt(c.test_err) << ',';
      if (c.T1) out << *c.T1;
      out << ',' << fmt(c.max_gamma_diag) << ',' << fmt(c.max_zeta) << ',' << fmt(c.recon_residual) << ',';
    } else {
      out << ",,,,,,,,";
    }
    out << fmt(c.wall_time_s) << ',' << c.termination << '\n';
  }
}

void write_aggregates_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << "p,sigma_n,cells,t1_cells";
  for (const auto& col : aggregate_columns()) out << ',' << col << "_mean," << col << "_std";
  out << '\n';
  for (const AggregateRow& r : rows) {
    out << fmt(r.p) << ',' << fmt(r.sigma_n) << ',' << r.cells << ',' << r.t1_cells;
    for (std::size_t k = 0; k < r.mean.size(); ++k) out << ',' << fmt(r.mean[k]) << ',' << fmt(r.stddev[k]);
    out << '\n';
  }
}

std::vector<SweepCell> read_cells_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("cells CSV is empty");
  std::vector<SweepCell> cells;
  auto num = [](const std::string& s) { return std::strtod(s.c_str(), nullptr); };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    std::istringstream ls(line);
    while (std::getline(ls, cur, ',')) f.push_back(cur);
    if (f.size() != 13) throw IoError("cells CSV row has " + std::to_string(f.size()) + " fields");
    SweepCell c;
    c.p = num(f[0]);
    c.sigma_n = num(f[1]);
    c.seed = std::stoull(f[2]);
    c.has_outcomes = !f[3].empty();
    if (c.has_outcomes) {
      c.train_loss = num(f[3]);
      c.train_err = num(f[4]);
      c.test_loss = num(f[5]);
      c.test_err = num(f[6]);
      if (!f[7].empty()) c.T1 = std::stoull(f[7]);
      c.max_gamma_diag = num(f[8]);
      c.max_zeta = num(f[9]);
      c.recon_residual = num(f[10]);
    }
    c.wall_time_s = num(f[11]);
    c.termination = f[12];
    cells.push_back(std::move(c));
  }
  return cells;
}

CheckReport preset_condition_report(const ExperimentConfig& cfg) {
  const double p = cfg.sweep.p_values.empty() ? cfg.pruning.p : cfg.sweep.p_values.front();
  const double sigma_n = cfg.sweep.sigma_n_values.empty() ? cfg.data.sigma_n : cfg.sweep.sigma_n_values.front();
  const CellSetup setup = prepare_cell(cfg, p, sigma_n, cfg.data.seed);
  const ExperimentConfig& c = setup.config;
  ConditionInputs in{c.data.K, c.data.d, c.data.n, c.model.m, c.data.mu, c.data.sigma_n, c.model.sigma0,
                     c.train.eta, c.train.epsilon, p, c.model.make_activation().degree(), c.train.t_max};
  ConditionConstants cc;
  cc.C = c.diagnostics.C;
  cc.alpha_multiplier = c.diagnostics.alpha_multiplier;
  return validate_condition_set(in, cc, &setup.net0, &setup.train);
}

std::string sweep_metadata(const SweepResult& result, const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["preset"] = cfg.preset;
  j["p_convention"] = "retention probability (mask bit ~ Bernoulli(p))";
  if (cfg.sweep.pruned_fraction_axis) j["pruned_fraction"] = "1 - p";
  j["config"] = to_ini(cfg);
  j["condition_set"] = nlohmann::ordered_json::parse(preset_condition_report(cfg).to_json());
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const CellResult& c : result.cells) {
    nlohmann::ordered_json e;
    e["p"] = c.cell.p;
    e["sigma_n"] = c.cell.sigma_n;
    e["seed"] = c.cell.seed;
    e["termination"] = c.cell.termination;
    e["final_iteration"] = c.trace.final_iteration;
    e["mask_hash"] = c.mask_hash_before;
    e["mask_unchanged"] = c.mask_hash_before == c.mask_hash_after;
    if (cfg.pruning.reject_signal) e["mask_rejection_attempts"] = c.rejection_attempts;
    e["max_bound_ratio"] = c.trace.max_bound_ratio;
    if (!c.error.empty()) e["error"] = c.error;
    cells.push_back(std::move(e));
  }
  j["cells"] = std::move(cells);
  return j.dump(2);
}

void emit_sweep(const SweepResult& result, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  if (result.cells.empty()) throw ConfigError("emit: no cells to write");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name);
    if (!f) throw IoError("cannot write " + (dir / name).string());
    return f;
  };
  std::vector<SweepCell> cells;
  for (const auto& c : result.cells) cells.push_back(c.cell);
  {
    auto f = open("cells.csv");
    write_cells_csv(f, cells);
  }
  {
    auto f = open("aggregates.csv");
    write_aggregates_csv(f, result.aggregates);
  }
  {
    auto f = open("diagnostics.jsonl");
    for (const auto& c : result.cells) {
      for (const auto& rep : c.diagnostics) {
        auto obj = nlohmann::ordered_json::parse(rep.to_json());
        nlohmann::ordered_json line;
        line["p"] = c.cell.p;
        line["sigma_n"] = c.cell.sigma_n;
        line["seed"] = c.cell.seed;
        for (auto& [k, v] : obj.items()) line[k] = v;
        f << line.dump() << '\n';
      }
    }
  }
  {
    auto f = open("metadata.json");
    f << sweep_metadata(result, cfg) << '\n';
  }
}

}  // namespace prunelab
