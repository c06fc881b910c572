#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "occlunet/analysis/activations.hpp"
#include "occlunet/analysis/tsne.hpp"
#include "occlunet/train/trainer.hpp"

namespace occlunet::analysis {

// ---------------------------------------------------------------------------
// Softmax trajectories

/// Mean softmax output per time step for the samples of one target class.
struct ClassTrajectory {
  int cls = 0;
  int n = 0;
  std::vector<std::vector<double>> mean;  // [t][unit]
  std::vector<std::vector<double>> se;    // [t][unit]; NaN when n < 2
};

/// One curve set per class in `classes` (all classes if empty). Classes
/// without samples are skipped and reported through `warn`.
std::vector<ClassTrajectory> softmax_trajectories(std::span<const train::TrialRecord> records, int time_steps,
                                                  int classes, std::span<const int> class_filter = {},
                                                  const std::function<void(const std::string&)>& warn = {});

/// Mean probability assigned to the true class at every time step.
std::vector<double> correct_class_curve(std::span<const train::TrialRecord> records, int time_steps, int classes);

std::string trajectories_csv(std::span<const ClassTrajectory> trajectories);
std::string trajectories_svg(std::span<const ClassTrajectory> trajectories);

// ---------------------------------------------------------------------------
// Time trajectories in a joint embedding

struct TrajectoryPoint {
  int stimulus = 0;
  int label = 0;
  int t = 0;
  bool occluded = false;
  double x = 0;
  double y = 0;
};

struct TrajectoryExport {
  std::vector<TrajectoryPoint> points;  // un-occluded first, then occluded; t fastest
  /// One ordered polyline per un-occluded stimulus.
  std::vector<std::vector<std::pair<double, double>>> polylines;
};

/// Activation vectors of all time steps, un-occluded records first, in the
/// order expected by time_trajectory_export.
std::vector<std::vector<double>> pooled_activations(std::span<const ActivationRecord> unoccluded,
                                                    std::span<const ActivationRecord> occluded);

/// Throws ValidationError if the embedding does not hold exactly one point
/// per record and time step.
TrajectoryExport time_trajectory_export(std::span<const ActivationRecord> unoccluded,
                                        std::span<const ActivationRecord> occluded, const Embedding& embedding);

std::string trajectory_csv(const TrajectoryExport& e);
std::string trajectory_svg(const TrajectoryExport& e);

// ---------------------------------------------------------------------------
// Relative-distance summaries

struct DistanceSummary {
  int occluder = 0;
  int t = 0;
  int n = 0;
  double mean = 0;
  double min = 0, q05 = 0, q25 = 0, median = 0, q75 = 0, q95 = 0, max = 0;
};

/// Quantiles (linear interpolation) of valid r per (occluder, t).
std::vector<DistanceSummary> summarize_distances(std::span<const RelativeDistanceRecord> records);

std::string distances_csv(std::span<const RelativeDistanceRecord> records);
std::string violin_csv(std::span<const DistanceSummary> summary);
/// Kernel-density violins per (occluder, t) with a dashed line at each
/// occluder's t0 mean.
std::string violin_svg(std::span<const RelativeDistanceRecord> records);

std::string activations_csv(std::span<const ActivationRecord> records);

/// Writes `text` to `path`, creating parent directories.
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace occlunet::analysis
