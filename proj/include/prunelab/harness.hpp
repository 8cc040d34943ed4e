#pragma once

#include "prunelab/config.hpp"
#include "prunelab/decomp.hpp"
#include "prunelab/diagnostics.hpp"
#include "prunelab/model.hpp"
#include "prunelab/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace prunelab {

std::vector<std::string> preset_names();
/// fig3a, fig3b, fig3c, mild_theory, over_theory or custom.
ExperimentConfig make_preset(const std::string& name);

struct SweepCell {
  double p = 1.0;
  double sigma_n = 0.0;
  std::uint64_t seed = 0;
  bool has_outcomes = false;
  double train_loss = 0.0;
  double train_err = 0.0;
  double test_loss = 0.0;
  double test_err = 0.0;
  std::optional<std::uint64_t> T1;
  double max_gamma_diag = 0.0;
  double max_zeta = 0.0;
  double recon_residual = 0.0;
  double wall_time_s = 0.0;
  std::string termination;
};

struct CellOptions {
  bool keep_net = false;
  bool keep_decomp = false;
  bool timing = false;
};

struct CellResult {
  SweepCell cell;
  TrainTrace trace;
  std::vector<CheckReport> diagnostics;
  std::uint64_t mask_hash_before = 0;
  std::uint64_t mask_hash_after = 0;
  std::uint64_t rejection_attempts = 0;
  std::optional<MaskedNet> net;
  std::optional<DecompState> decomp;
  std::string error;
};

/// Data, eval set, mask and initial weights for one (p, sigma_n, seed).
struct CellSetup {
  ExperimentConfig config;  // with p, sigma_n and seed filled in
  Dataset train;
  Dataset eval;
  MaskedNet net0;
  std::uint64_t rejection_attempts = 0;
};

CellSetup prepare_cell(const ExperimentConfig& base, double p, double sigma_n, std::uint64_t seed);

CellResult run_cell(const ExperimentConfig& base, double p, double sigma_n, std::uint64_t seed,
                    const CellOptions& opts = {});

struct AggregateRow {
  double p = 0.0;
  double sigma_n = 0.0;
  std::size_t cells = 0;
  std::size_t t1_cells = 0;
  // Mean and sample standard deviation (0 for one cell) per outcome, in column order.
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Outcome columns that are aggregated.
const std::vector<std::string>& aggregate_columns();

struct SweepResult {
  std::vector<CellResult> cells;  // sorted by (p, sigma_n, seed)
  std::vector<AggregateRow> aggregates;
};

/// All cells of the grid, `threads` at a time. Output order does not depend on `threads`.
SweepResult run_sweep(const ExperimentConfig& cfg, std::size_t threads, const CellOptions& opts = {});

std::vector<AggregateRow> aggregate(const std::vector<SweepCell>& cells);

void write_cells_csv(std::ostream& out, const std::vector<SweepCell>& cells);
void write_aggregates_csv(std::ostream& out, const std::vector<AggregateRow>& rows);
std::vector<SweepCell> read_cells_csv(std::istream& in);

/// cells.csv, aggregates.csv, diagnostics.jsonl and metadata.json under `dir`.
void emit_sweep(const SweepResult& result, const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// JSON metadata: config, retention convention, condition-set report, rejection counts.
std::string sweep_metadata(const SweepResult& result, const ExperimentConfig& cfg);

/// Condition-set report for the config's first grid point (seed from data.seed).
CheckReport preset_condition_report(const ExperimentConfig& cfg);

}  // namespace prunelab
