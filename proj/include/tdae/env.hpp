// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tdae/rng.hpp"
#include "tdae/tensor.hpp"

namespace tdae {

enum class ScenarioKind { kKItem, kLabyrinth, kTwoColor, kConstObs, kTabularChain };

std::string to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(const std::string& name);

enum Action : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
inline constexpr int kNumActions = 4;

/// Action-independent Markov chain with per-state rewards r[s] received on
/// leaving s. Entering a terminal state ends the episode.
struct TabularChainSpec {
  Eigen::MatrixXd transitions;  // S x S, rows sum to 1
  Eigen::VectorXd rewards;      // S
  std::vector<Index> terminal;
  Index start = 0;

  bool is_terminal(Index s) const;
  void validate() const;
  bool operator==(const TabularChainSpec& o) const;
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::kKItem;
  Index grid_size = 9;
  Index view_radius = 2;
  bool full_view = false;
  Index timeout = 200;
  Index item_count = 2;               // KItem: k items; TwoColor: items per color
  Index indicator_visible_steps = 15;  // TwoColor
  std::optional<std::uint64_t> fixed_layout_seed;  // every reset draws this layout
  double const_value = 0.6;
  std::array<Index, 3> const_shape{3, 5, 5};
  TabularChainSpec chain;

  /// Scenario with the default timeout and view for its kind.
  static Scenario defaults(ScenarioKind kind);

  std::array<Index, 3> observation_shape() const;
  Index observation_size() const;
  void validate() const;
  bool operator==(const Scenario&) const = default;
};

/// Deterministic 3-state chain s0 -> s1 -> terminal with r = (0, 1, 0).
TabularChainSpec two_step_chain();

enum class Cell : std::uint8_t { kFloor, kWall, kGoal, kIndicator, kItem };

struct EnvState {
  Index rows = 0, cols = 0;
  std::vector<Cell> cells;
  std::vector<int> item_color;  // per cell, -1 when no item
  Index agent_row = 0, agent_col = 0;
  Index items_remaining = 0;
  int next_item = 0;        // KItem: color index that must be collected next
  int indicator_color = 0;  // TwoColor: 0 red, 1 green
  Index indicator_row = 0, indicator_col = 0;
  Index steps = 0;
  Index chain_state = 0;
  bool finished = true;

  Cell cell(Index r, Index c) const { return cells[static_cast<std::size_t>(r * cols + c)]; }
  int item(Index r, Index c) const { return item_color[static_cast<std::size_t>(r * cols + c)]; }
};

struct StepResult {
  Tensor<double> obs;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
};

namespace palette {
inline constexpr std::array<double, 3> kFloor{0.0, 0.0, 0.0};
inline constexpr std::array<double, 3> kWall{0.3, 0.3, 0.3};
inline constexpr std::array<double, 3> kAgent{1.0, 1.0, 1.0};
inline constexpr std::array<double, 3> kGoal{0.0, 1.0, 0.0};
inline constexpr std::array<double, 3> kNeutral{0.5, 0.5, 0.5};
inline constexpr std::array<double, 3> kRed{1.0, 0.0, 0.0};
inline constexpr std::array<double, 3> kGreen{0.0, 1.0, 0.0};
/// KItem colors in collection order.
inline constexpr std::array<std::array<double, 3>, 8> kItems{{{1.0, 0.0, 0.0},
                                                             {0.0, 0.0, 1.0},
                                                             {1.0, 1.0, 0.0},
                                                             {1.0, 0.0, 1.0},
                                                             {0.0, 1.0, 1.0},
                                                             {1.0, 0.5, 0.0},
                                                             {0.5, 0.0, 1.0},
                                                             {0.0, 0.5, 0.5}}};
}  // namespace palette

/// One environment instance. Not thread-safe; each worker owns its own.
class Env {
 public:
  explicit Env(Scenario scenario);

  /// Draws a fresh layout from `seed` (or the scenario's fixed layout seed)
  /// and returns the initial observation.
  Tensor<double> reset(std::uint64_t seed);
  /// Throws UsageError when the episode already ended.
  StepResult step(int action);
  Tensor<double> render() const;

  const Scenario& scenario() const { return scenario_; }
  const EnvState& state() const { return state_; }
  /// Direct state access for constructing test situations.
  EnvState& mutable_state() { return state_; }

 private:
  void reset_grid_world(Rng& layout_rng);
  double move_agent(int action, bool& terminated);

  Scenario scenario_;
  EnvState state_;
  Rng rng_;
};

/// State values v = (I - gamma P)^-1 r with terminal rows removed; the value
/// of a terminal state is 0. Throws DomainError if the system is singular.
Eigen::VectorXd analytic_values(const TabularChainSpec& chain, double gamma);

struct TrajectoryStep {
  Tensor<double> obs;  // observation the action was taken from
  int action = 0;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
};

// Trajectory dump layout (little-endian):
//   char[8] "TDAETRAJ", u32 version (1), u32 C, u32 H, u32 W, u64 steps,
//   then per step: i32 action, f64 reward, u8 terminated, u8 truncated,
//   C*H*W x f64 observation.
inline constexpr std::uint32_t kTrajectoryVersion = 1;

void write_trajectory(const std::filesystem::path& path, const std::array<Index, 3>& shape,
                      const std::vector<TrajectoryStep>& steps);
std::vector<TrajectoryStep> read_trajectory(const std::filesystem::path& path, std::array<Index, 3>* shape = nullptr);

}  // namespace tdae
