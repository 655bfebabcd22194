// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tdae/env.hpp"
#include "tdae/network.hpp"
#include "tdae/optim.hpp"
#include "tdae/returns.hpp"
#include "tdae/rollout.hpp"

namespace tdae {

enum class Precision { kFloat64, kFloat32 };

/// Axes of a sweep. Each non-empty axis multiplies the run set; lambda and
/// gamma_aux vary the first auxiliary head.
struct SweepAxes {
  std::vector<double> lambda;
  std::vector<double> gamma_aux;
  std::vector<Index> segment_length;
  std::vector<std::uint64_t> seeds;
  bool include_baseline = false;  // one extra point without auxiliary heads
  Index jobs = 1;

  bool empty() const { return lambda.empty() && gamma_aux.empty() && segment_length.empty() && !include_baseline; }
  bool operator==(const SweepAxes&) const = default;
};

struct ExperimentConfig {
  std::string name = "run";
  Scenario scenario;
  NetworkConfig network;  // input shape, action count and head count are derived
  RolloutConfig rollout{8, 16};
  double gamma = 0.99;
  LossWeights weights;
  std::vector<TDAESpec> auxiliary;
  RmsPropConfig optimizer;
  Precision precision = Precision::kFloat64;
  std::uint64_t total_frames = 300000;
  std::uint64_t eval_every_frames = 25000;
  Index eval_episodes = 50;
  ActionSelection eval_action_selection = ActionSelection::kSample;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "runs";
  bool record_wall_time = false;
  SweepAxes sweep;

  /// Fills the derived network fields from the scenario and head list.
  void resolve();
  /// Throws ConfigError describing the first invalid field.
  void validate() const;
  TrainSettings train_settings() const;
  std::uint64_t frames_per_update() const { return static_cast<std::uint64_t>(rollout.transitions_per_update()); }
  bool operator==(const ExperimentConfig&) const;
};

std::string to_string(Precision p);
std::string to_string(ActionSelection a);
std::string to_string(TrunkKind t);

/// Serializes every field. parse_config(to_json(c)) == c.
std::string config_to_json(const ExperimentConfig& config, int indent = 2);
/// Strict parse: unknown keys and wrong types are ConfigErrors naming the
/// offending path. Missing keys keep their defaults; scenario defaults
/// depend on the scenario kind.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace tdae
