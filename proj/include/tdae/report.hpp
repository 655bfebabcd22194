// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tdae/env.hpp"
#include "tdae/network.hpp"
#include "tdae/rollout.hpp"

namespace tdae {

struct MetricsRow {
  std::uint64_t frames = 0;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
  double stddev = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double tdae_loss = 0.0;
  double wall_time = 0.0;
};

/// Throws ConfigError on a malformed file.
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

/// Sorted paths matching a shell-style pattern; '*' also matches '/'.
std::vector<std::filesystem::path> glob_paths(const std::string& pattern);

/// Evaluation curve of one seed.
struct RunCurve {
  std::string source;
  std::string group;
  std::uint64_t seed = 0;
  std::vector<double> frames;
  std::vector<double> returns;
};

/// Reads a metrics file; the group is `group_by` looked up as a dotted key
/// in the config of the manifest next to it.
RunCurve load_curve(const std::filesystem::path& metrics, const std::string& group_by);

struct CurveGroup {
  std::string label;
  Index seeds = 0;
  std::vector<double> frames;
  std::vector<double> mean;
  std::vector<double> stderr_;  // s / sqrt(k), zero for a single seed
};

/// Per-group mean and standard error over seeds. Groups whose frame grids
/// differ are interpolated onto the grid with the fewest points inside the
/// common range, with a message appended to `warnings`.
std::vector<CurveGroup> aggregate_curves(const std::vector<RunCurve>& curves, std::vector<std::string>* warnings);
std::string render_curves_svg(const std::vector<CurveGroup>& groups, const std::string& title);

struct BimodalityRow {
  std::string source;
  std::uint64_t seed = 0;
  double final_mean = 0.0;  // mean over the final quarter of evaluations
  bool learning = false;
};

struct BimodalityReport {
  double theta = 0.0;
  bool theta_given = false;
  std::vector<BimodalityRow> rows;
  Index learning = 0;
  Index failure = 0;

  std::string table() const;
};

/// Labels a seed as learning when its final-quarter mean exceeds theta
/// (default: midpoint of the best and worst seed). Throws DomainError for
/// curves with fewer than 4 evaluations.
BimodalityReport bimodality_report(const std::vector<RunCurve>& curves, std::optional<double> theta = std::nullopt);
std::string render_bimodality_svg(const std::vector<RunCurve>& curves, const BimodalityReport& report);

/// G_t = sum_k gamma^k (1 - gamma) x_{t+k}, summed forward until the first
/// cut j >= t. Termination ends the sum; truncation and the last step add
/// gamma^{k+1} * bootstrap[j].
std::vector<double> empirical_scaled_return(const std::vector<double>& x, const std::vector<std::uint8_t>& terminated,
                                            const std::vector<std::uint8_t>& truncated,
                                            const std::vector<double>& bootstrap, double gamma);

struct TraceResult {
  std::vector<Index> pixels;
  double gamma_aux = 0.0;
  Index steps = 0;
  RowMatrixX<double> observation;  // [K x P]
  RowMatrixX<double> prediction;   // [K x P], psi_i(S_t)
  RowMatrixX<double> empirical;    // [K x P]
  std::vector<TrajectoryStep> trajectory;
};

/// Rolls out `steps` transitions from a fresh episode, resetting after
/// every episode end, and pairs head `head`'s predictions with the
/// empirical scaled return of each selected pixel.
TraceResult pixel_prediction_trace(const AgentParams<double>& params, const Scenario& scenario,
                                   const std::vector<Index>& pixels, Index steps, double gamma_aux, Index head,
                                   std::uint64_t seed, ActionSelection selection = ActionSelection::kSample);

std::string render_trace_svg(const TraceResult& trace);
void write_trace_csv(const std::filesystem::path& path, const TraceResult& trace);

}  // namespace tdae
