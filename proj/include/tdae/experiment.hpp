// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tdae/config.hpp"

namespace tdae {

inline constexpr const char* kVersion = "tdae 0.1.0";

struct EvalRecord {
  std::uint64_t frames = 0;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
  double return_stddev = 0.0;  // population standard deviation
  std::vector<double> returns;
  double wall_time = 0.0;
};

/// Runs `episodes` fresh episodes in lock-step with frozen parameters.
/// Episode e uses the layout stream (seed, e), so every call with the same
/// seed sees the same layouts.
template <typename Scalar>
EvalRecord evaluate(const AgentParams<Scalar>& params, const Scenario& scenario, Index episodes, std::uint64_t seed,
                    ActionSelection selection = ActionSelection::kSample);

/// Files of one (config, seed) run.
struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path manifest, metrics, updates, evals, episodes, timing, checkpoints;
  explicit RunPaths(std::filesystem::path run_dir);
};

struct RunResult {
  RunPaths paths;
  std::uint64_t updates = 0;
  std::uint64_t frames = 0;
  std::vector<EvalRecord> evals;
};

/// Output directory of seed k: <output_dir>/seed_<k>.
std::filesystem::path run_directory(const ExperimentConfig& config, std::uint64_t seed);

/// Trains for floor(total_frames / (W n)) updates, evaluating every
/// eval_every_frames and after the last update. Progress goes to `log`.
RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log = nullptr);

/// Checkpoint metadata holds the resolved config and the training position.
std::string checkpoint_metadata(const ExperimentConfig& config, std::uint64_t seed, std::uint64_t frames);
struct CheckpointInfo {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::uint64_t frames = 0;
  AgentParams<double> params;
};
CheckpointInfo load_checkpoint(const std::filesystem::path& path);

struct SweepPoint {
  std::string label;
  ExperimentConfig config;
  std::optional<double> gamma_aux;
  std::optional<double> lambda;
  std::optional<Index> segment_length;
  bool baseline = false;
};

/// Cartesian product of the sweep axes; an empty axis set is one base run.
/// Throws ConfigError when two points share an output directory.
std::vector<SweepPoint> expand_sweep(const ExperimentConfig& base);

struct SweepRow {
  std::string label;
  std::optional<double> gamma_aux;
  std::optional<double> lambda;
  Index segment_length = 0;
  bool baseline = false;
  Index seed_count = 0;
  double final_mean = 0.0;    // mean over seeds of the last evaluation
  double final_stderr = 0.0;
};

struct BestLambda {
  double gamma_aux = 0.0;
  Index segment_length = 0;
  double lambda = 0.0;
  double final_mean = 0.0;
};

struct SweepSummary {
  std::vector<SweepRow> rows;
  std::vector<BestLambda> best;  // one per (gamma_aux, n)
};

/// Summary from per-point, per-seed final evaluations.
SweepSummary summarize_sweep(const std::vector<SweepPoint>& points,
                             const std::vector<std::vector<double>>& final_returns);

/// Runs every (point, seed) with up to sweep.jobs concurrent runs and
/// writes summary.csv and summary.md into the base output directory.
SweepSummary run_sweep(const ExperimentConfig& base, std::ostream* log = nullptr);

std::string format_double(double v);

}  // namespace tdae
