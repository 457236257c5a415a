#pragma once

// Consolidation of training runs: every directory holding metrics.csv and
// config.json (as written by train) is one run; runs whose configs differ only
// in the seed form one group.

#include <optional>
#include <string>
#include <vector>

#include "pcd/trainer.hpp"

namespace pcd {

/// A run has converged at the first evaluation with w1 <= 0.15 * scale and
/// every mode covered.
inline constexpr double kConvergedW1 = 0.15;

struct RunSummary {
  std::string path;  // relative to the report root
  std::string group;
  std::uint64_t seed = 0;
  double scale = 1.0;
  std::size_t centers = 0;
  MetricsRecord final;
  std::optional<std::size_t> converged_at;
};

struct GroupSummary {
  std::string label;
  std::size_t runs = 0;
  double scale = 1.0;
  std::size_t centers = 0;
  double objective = 0.0;  // medians over the runs' final rows
  double w1 = 0.0;
  double modes = 0.0;
  double hq_frac = 0.0;
  std::size_t converged_runs = 0;
  std::optional<double> converged_at;  // median over converged runs
};

struct RunReport {
  std::vector<RunSummary> runs;
  std::vector<GroupSummary> groups;
};

double median(std::vector<double> values);

std::optional<std::size_t> convergence_step(const std::vector<MetricsRecord>& records, double scale,
                                            std::size_t centers);

/// Scans `dir` recursively. Throws when no run is found or a file is malformed.
RunReport build_report(const std::string& dir);

/// One `run` row per run, then one `median` row per group.
void write_report_csv(const std::string& path, const RunReport& report);

/// Comparison table across groups.
std::string render_report(const RunReport& report);

}  // namespace pcd
