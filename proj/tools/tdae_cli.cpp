// SPDX-License-Identifier: Apache-2.0
// Command-line front end: train, sweep, eval, plot, bimodal, trace.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tdae/experiment.hpp"
#include "tdae/report.hpp"

namespace fs = std::filesystem;
using namespace tdae;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
  std::cout << "wrote " << path.string() << "\n";
}

std::vector<RunCurve> load_curves(const std::string& pattern, const std::string& group_by) {
  const auto files = glob_paths(pattern);
  if (files.empty()) throw ConfigError("no files match '" + pattern + "'");
  std::vector<RunCurve> curves;
  for (const auto& f : files) curves.push_back(load_curve(f, group_by));
  return curves;
}

int cmd_train(const std::string& config_path, std::uint64_t seed, const std::string& output) {
  ExperimentConfig cfg = load_config(config_path);
  if (!output.empty()) cfg.output_dir = output;
  const RunResult r = run_experiment(cfg, seed, &std::cerr);
  std::cout << "run complete: " << r.updates << " updates, " << r.frames << " frames, " << r.evals.size()
            << " evaluations -> " << r.paths.dir.string() << "\n";
  if (!r.evals.empty()) std::cout << "final mean return " << format_double(r.evals.back().mean_return) << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, std::optional<Index> jobs) {
  ExperimentConfig cfg = load_config(config_path);
  if (jobs) cfg.sweep.jobs = *jobs;
  const SweepSummary s = run_sweep(cfg, &std::cerr);
  for (const auto& r : s.rows) {
    std::cout << r.label << ": " << format_double(r.final_mean) << " +- " << format_double(r.final_stderr) << " ("
              << r.seed_count << " seeds)\n";
  }
  for (const auto& b : s.best) {
    std::cout << "best lambda for gamma_aux " << format_double(b.gamma_aux) << ", n " << b.segment_length << ": "
              << format_double(b.lambda) << "\n";
  }
  std::cout << "summary in " << (cfg.output_dir / "summary.md").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, Index episodes, std::optional<std::uint64_t> seed, bool argmax) {
  const CheckpointInfo info = load_checkpoint(checkpoint);
  const EvalRecord rec = evaluate(info.params, info.config.scenario, episodes, seed.value_or(info.seed),
                                  argmax ? ActionSelection::kArgmax : ActionSelection::kSample);
  nlohmann::ordered_json j{{"checkpoint", checkpoint},
                           {"frames", info.frames},
                           {"seed", rec.seed},
                           {"episodes", episodes},
                           {"mean_return", rec.mean_return},
                           {"return_stddev", rec.return_stddev},
                           {"returns", rec.returns}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_plot(const std::string& pattern, const std::string& group_by, const std::string& out,
             const std::string& title) {
  std::vector<std::string> warnings;
  const auto groups = aggregate_curves(load_curves(pattern, group_by), &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  write_text(out, render_curves_svg(groups, title));
  return 0;
}

int cmd_bimodal(const std::string& pattern, std::optional<double> theta, const std::string& out_dir) {
  const auto curves = load_curves(pattern, "name");
  const BimodalityReport rep = bimodality_report(curves, theta);
  std::cout << rep.table();
  write_text(fs::path(out_dir) / "bimodality.md", rep.table());
  write_text(fs::path(out_dir) / "bimodality.svg", render_bimodality_svg(curves, rep));
  return 0;
}

int cmd_trace(const std::string& checkpoint, const std::string& pixels_arg, Index steps, Index head,
              std::optional<std::uint64_t> seed, const std::string& out_dir) {
  const CheckpointInfo info = load_checkpoint(checkpoint);
  std::vector<Index> pixels;
  std::stringstream ss(pixels_arg);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      pixels.push_back(std::stol(item));
    } catch (const std::exception&) {
      throw ConfigError("pixel index '" + item + "' is not an integer");
    }
  }
  if (head < 0 || head >= static_cast<Index>(info.config.auxiliary.size())) {
    throw ConfigError("checkpoint has " + std::to_string(info.config.auxiliary.size()) + " TD-AE heads");
  }
  const double gamma_aux = info.config.auxiliary[static_cast<std::size_t>(head)].gamma_aux;
  const TraceResult tr = pixel_prediction_trace(info.params, info.config.scenario, pixels, steps, gamma_aux, head,
                                                seed.value_or(info.seed));
  fs::create_directories(out_dir);
  write_trace_csv(fs::path(out_dir) / "trace.csv", tr);
  std::cout << "wrote " << (fs::path(out_dir) / "trace.csv").string() << "\n";
  write_text(fs::path(out_dir) / "trace.svg", render_trace_svg(tr));
  write_trajectory(fs::path(out_dir) / "trajectory.bin", info.config.scenario.observation_shape(), tr.trajectory);
  std::cout << "wrote " << (fs::path(out_dir) / "trajectory.bin").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TD-AE actor-critic experiments"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, pattern, group_by = "name", out, title = "evaluation return";
  std::string output_dir, pixels, out_dir = ".";
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_override;
  std::optional<Index> jobs;
  std::optional<double> theta;
  Index episodes = 50, steps = 200, head = 0;
  bool argmax = false;

  auto* train = app.add_subcommand("train", "train one seed of a config");
  train->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "run seed")->required();
  train->add_option("--output", output_dir, "override output_dir");

  auto* sweep = app.add_subcommand("sweep", "run the sweep axes of a config");
  sweep->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("--jobs", jobs, "concurrent runs");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint with frozen weights");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes, "episodes to run")->capture_default_str();
  eval->add_option("--seed", seed_override, "evaluation seed (default: training seed)");
  eval->add_flag("--argmax", argmax, "greedy actions instead of sampling");

  auto* plot = app.add_subcommand("plot", "learning curves with standard-error bands");
  plot->add_option("--glob", pattern, "metrics.csv pattern")->required();
  plot->add_option("--group-by", group_by, "config key to group seeds by")->capture_default_str();
  plot->add_option("--out", out, "output SVG")->default_val("curves.svg");
  plot->add_option("--title", title, "plot title")->capture_default_str();

  auto* bimodal = app.add_subcommand("bimodal", "classify seeds into learning and failure modes");
  bimodal->add_option("--glob", pattern, "metrics.csv pattern")->required();
  bimodal->add_option("--theta", theta, "absolute threshold (default: midpoint)");
  bimodal->add_option("--out-dir", out_dir, "report directory")->capture_default_str();

  auto* trace = app.add_subcommand("trace", "per-pixel prediction traces of a TD-AE head");
  trace->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  trace->add_option("--pixels", pixels, "comma-separated flat pixel indices")->required();
  trace->add_option("--steps", steps, "trace length")->capture_default_str();
  trace->add_option("--head", head, "TD-AE head index")->capture_default_str();
  trace->add_option("--seed", seed_override, "rollout seed (default: training seed)");
  trace->add_option("--out-dir", out_dir, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config_path, seed, output_dir);
    if (*sweep) return cmd_sweep(config_path, jobs);
    if (*eval) return cmd_eval(checkpoint, episodes, seed_override, argmax);
    if (*plot) return cmd_plot(pattern, group_by, out, title);
    if (*bimodal) return cmd_bimodal(pattern, theta, out_dir);
    if (*trace) return cmd_trace(checkpoint, pixels, steps, head, seed_override, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
