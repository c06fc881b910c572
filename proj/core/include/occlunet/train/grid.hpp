#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "occlunet/rcnn/arch.hpp"
#include "occlunet/train/config.hpp"

namespace occlunet::train {

struct GridConfig {
  std::vector<rcnn::ModelKind> models;
  std::vector<std::filesystem::path> datasets;  // generated dataset directories
  /// epochs, batch_size, eta, seed, repetitions, repetition_mode, time_steps;
  /// model, channels and data are set per run.
  TrainConfig base;
  std::filesystem::path out_dir;
  /// Reuse a finished run whose stored config matches instead of retraining.
  bool reuse = true;
};

struct GridRun {
  std::string dataset;
  std::string model;
  int repetition = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  bool reused = false;
  std::string message;
  double error = 0;
  std::filesystem::path dir;
};

/// Aggregate for one (dataset, model) cell.
struct GridCell {
  std::string dataset;
  std::string model;
  std::vector<double> errors;  // successful runs only
  int expected = 0;            // runs attempted or planned
  double mean = 0;             // NaN when no run succeeded
  double se = 0;               // NaN when fewer than two runs succeeded
  /// "ok", "partial" (some runs missing or failed) or "missing".
  std::string status;
};

struct GridResult {
  std::vector<std::string> models;
  std::vector<std::string> datasets;
  std::vector<GridRun> runs;
  std::vector<GridCell> cells;
};

using GridLog = std::function<void(const std::string&)>;

/// Trains repetitions x models x datasets into
/// out_dir/<dataset>/<model>/rep<k>/ and writes runs.csv, table.csv
/// (models as rows, mean and SE per dataset) and the report bundle. A failed
/// run is recorded with its message and the grid continues.
GridResult run_experiment_grid(const GridConfig& config, const GridLog& log = {});

/// Fills mean, SE and status of every cell from `runs`.
std::vector<GridCell> aggregate(const std::vector<GridRun>& runs, const std::vector<std::string>& datasets,
                                const std::vector<std::string>& models, int repetitions);

/// Table 2 layout: one row per model, <dataset>_mean,<dataset>_se columns.
std::string grid_table_csv(const GridResult& result);
std::string grid_runs_csv(const GridResult& result);

/// Scans a grid directory for <dataset>/<model>/rep<k>/result.txt files.
std::vector<GridCell> collect_cells(const std::filesystem::path& grid_dir);

/// report.csv (dataset,model,n,mean_error,se_error,status) and report.svg
/// (bars with SE error bars). An empty cell list yields a header-only CSV.
void emit_report(const std::vector<GridCell>& cells, const std::filesystem::path& out_dir);
std::string report_csv(const std::vector<GridCell>& cells);
std::string report_svg(const std::vector<GridCell>& cells);

}  // namespace occlunet::train
