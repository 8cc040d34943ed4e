// prunelab command line: run, sweep, diag, preset.
#include "prunelab/config.hpp"
#include "prunelab/decomp.hpp"
#include "prunelab/diagnostics.hpp"
#include "prunelab/harness.hpp"
#include "prunelab/model.hpp"
#include "prunelab/pruner.hpp"

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace prunelab;

namespace {

struct Source {
  std::string config_path;
  std::string preset;
};

ExperimentConfig resolve(const Source& src) {
  if (!src.config_path.empty() && !src.preset.empty()) throw ConfigError("give either --config or --preset, not both");
  if (!src.config_path.empty()) return load_config(src.config_path);
  return make_preset(src.preset.empty() ? "custom" : src.preset);
}

void add_source(CLI::App* cmd, Source& src) {
  cmd->add_option("-c,--config", src.config_path, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--preset", src.preset, "Named preset used as the configuration");
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

int cmd_preset(const std::string& name) {
  std::cout << to_ini(make_preset(name));
  return 0;
}

struct RunArgs {
  Source src;
  std::optional<double> p, sigma_n;
  std::optional<std::uint64_t> seed;
  std::string out = "prunelab_run";
  bool timing = false;
};

int cmd_run(const RunArgs& a) {
  ExperimentConfig cfg = resolve(a.src);
  const double p = a.p.value_or(cfg.sweep.p_values.empty() ? cfg.pruning.p : cfg.sweep.p_values.front());
  const double sigma_n =
      a.sigma_n.value_or(cfg.sweep.sigma_n_values.empty() ? cfg.data.sigma_n : cfg.sweep.sigma_n_values.front());
  const std::uint64_t seed = a.seed.value_or(cfg.data.seed);

  CellOptions opts;
  opts.keep_net = true;
  opts.keep_decomp = true;
  opts.timing = a.timing;
  const CellResult res = run_cell(cfg, p, sigma_n, seed, opts);
  if (res.cell.termination == "error") throw std::runtime_error(res.error);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  {
    auto f = open_out(dir / "cells.csv");
    write_cells_csv(f, {res.cell});
  }
  {
    auto f = open_out(dir / "trace.csv");
    write_trace_csv(f, res.trace);
  }
  {
    auto f = open_out(dir / "diagnostics.jsonl");
    for (const auto& rep : res.diagnostics) f << rep.to_json() << '\n';
  }
  {
    ExperimentConfig used = cfg;
    used.pruning.p = p;
    used.data.sigma_n = sigma_n;
    used.data.seed = seed;
    used.sweep.p_values = {p};
    used.sweep.sigma_n_values = {sigma_n};
    used.sweep.seeds = {seed};
    auto f = open_out(dir / "config.ini");
    f << to_ini(used);
  }
  if (res.net) {
    save_mask(res.net->mask(), dir / "mask.bin");
    save_checkpoint(*res.net, dir / "checkpoint.bin");
  }
  if (res.decomp) {
    auto f = open_out(dir / "coefficients.csv");
    write_coefficients_csv(f, *res.decomp, true);
  }
  std::printf("termination=%s iterations=%llu train_loss=%.6g test_err=%.4f out=%s\n", res.cell.termination.c_str(),
              static_cast<unsigned long long>(res.trace.final_iteration), res.cell.train_loss, res.cell.test_err,
              dir.string().c_str());
  return res.cell.termination == "numeric_error" ? 1 : 0;
}

struct SweepArgs {
  Source src;
  std::string p_values, sigma_values, seeds;
  std::string out = "prunelab_sweep";
  std::size_t threads = 1;
  bool timing = false;
};

int cmd_sweep(const SweepArgs& a) {
  ExperimentConfig cfg = resolve(a.src);
  if (!a.p_values.empty()) cfg.sweep.p_values = parse_real_list(a.p_values);
  if (!a.sigma_values.empty()) cfg.sweep.sigma_n_values = parse_real_list(a.sigma_values);
  if (!a.seeds.empty()) cfg.sweep.seeds = parse_seed_list(a.seeds);
  cfg.validate();
  CellOptions opts;
  opts.timing = a.timing;
  const SweepResult res = run_sweep(cfg, a.threads, opts);
  emit_sweep(res, cfg, a.out);
  std::size_t failed = 0;
  for (const auto& c : res.cells) failed += c.cell.has_outcomes ? 0 : 1;
  std::printf("cells=%zu aggregates=%zu failed=%zu out=%s\n", res.cells.size(), res.aggregates.size(), failed,
              a.out.c_str());
  return 0;
}

struct DiagArgs {
  Source src;
  std::vector<std::string> checks;
  std::string checkpoint, mask;
  std::optional<std::uint64_t> seed;
  std::optional<double> sigma_n;
};

int cmd_diag(const DiagArgs& a) {
  ExperimentConfig cfg = resolve(a.src);
  const std::uint64_t seed = a.seed.value_or(cfg.data.seed);
  const double sigma_n = a.sigma_n.value_or(cfg.data.sigma_n);
  const Mask mask = load_mask(a.mask);
  const MaskedNet net = load_checkpoint(a.checkpoint, mask);
  const CellSetup setup = prepare_cell(cfg, mask.p(), sigma_n, seed);
  if (setup.train.dim() != net.d() || setup.train.classes() != net.K()) {
    throw ConfigError("checkpoint shape does not match the configuration");
  }
  const ExperimentConfig& c = setup.config;

  std::vector<std::string> checks = a.checks;
  if (checks.empty() || std::find(checks.begin(), checks.end(), "all") != checks.end()) {
    checks = {"init", "balance", "geometry", "condition", "grad", "concentration", "gap"};
  }
  for (const auto& name : checks) {
    CheckReport rep;
    if (name == "grad") {
      rep = check_grad_bound(net, setup.train, c.diagnostics.grad_ceiling);
    } else if (name == "init") {
      rep = check_init_correlations(net, setup.train);
    } else if (name == "balance") {
      rep = check_class_balance(setup.train);
    } else if (name == "geometry") {
      rep = check_noise_geometry(mask, setup.train, NoiseGeometryOptions{c.diagnostics.noise_samples, seed});
    } else if (name == "condition") {
      ConditionInputs in{c.data.K, c.data.d, c.data.n, net.m(), c.data.mu, c.data.sigma_n, net.sigma0(),
                         c.train.eta, c.train.epsilon, mask.p(), net.activation().degree(), c.train.t_max};
      ConditionConstants cc;
      cc.C = c.diagnostics.C;
      cc.alpha_multiplier = c.diagnostics.alpha_multiplier;
      rep = validate_condition_set(in, cc, &net, &setup.train);
    } else if (name == "concentration") {
      rep = check_test_noise_concentration(net, c.data, ConcentrationOptions{c.diagnostics.n_mc, c.diagnostics.C, seed});
    } else if (name == "gap") {
      rep = check_generalization_gap(net, setup.eval, GapOptions{c.train.epsilon, mask.p(), c.data.n});
    } else {
      throw ConfigError("unknown check '" + name + "'");
    }
    std::cout << rep.to_json() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Weight-sized temporaries are allocated every step; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Pruned two-layer CNN simulation laboratory"};
  app.require_subcommand(1);

  std::string preset_name;
  auto* preset = app.add_subcommand("preset", "Print a preset's full configuration");
  preset->add_option("name", preset_name, "Preset name")->required()->check(CLI::IsMember(preset_names()));

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Train and evaluate a single cell");
  add_source(run, run_args.src);
  run->add_option("--p", run_args.p, "Retention probability");
  run->add_option("--sigma-n", run_args.sigma_n, "Noise standard deviation");
  run->add_option("--seed", run_args.seed, "Master seed");
  run->add_option("-o,--out", run_args.out, "Output directory");
  run->add_flag("--timing", run_args.timing, "Record wall-clock time (output no longer byte-reproducible)");

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "Run a (p, sigma_n, seed) grid");
  add_source(sweep, sweep_args.src);
  sweep->add_option("--p", sweep_args.p_values, "Retention values: start:stop:step or a comma list");
  sweep->add_option("--sigma-n", sweep_args.sigma_values, "Noise levels: start:stop:step or a comma list");
  sweep->add_option("--seeds", sweep_args.seeds, "Seeds: first:last or a comma list");
  sweep->add_option("--seed", sweep_args.seeds, "Single seed (alias of --seeds)");
  sweep->add_option("-o,--out", sweep_args.out, "Output directory");
  sweep->add_option("-j,--threads", sweep_args.threads, "Worker threads")->check(CLI::PositiveNumber);
  sweep->add_flag("--timing", sweep_args.timing, "Record wall-clock time (output no longer byte-reproducible)");

  DiagArgs diag_args;
  auto* diag = app.add_subcommand("diag", "Run named checks on a checkpoint");
  add_source(diag, diag_args.src);
  diag->add_option("--check", diag_args.checks,
                   "grad, init, balance, geometry, condition, concentration, gap or all (repeatable)");
  diag->add_option("--checkpoint", diag_args.checkpoint, "Weight checkpoint")->required()->check(CLI::ExistingFile);
  diag->add_option("--mask", diag_args.mask, "Mask file")->required()->check(CLI::ExistingFile);
  diag->add_option("--seed", diag_args.seed, "Data seed");
  diag->add_option("--sigma-n", diag_args.sigma_n, "Noise standard deviation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*preset) return cmd_preset(preset_name);
    if (*run) return cmd_run(run_args);
    if (*sweep) return cmd_sweep(sweep_args);
    if (*diag) return cmd_diag(diag_args);
  } catch (const prunelab::ConfigError& e) {
    // Bad user input (config keys, preset names, ranges) is a usage error.
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
