// SPDX-License-Identifier: Apache-2.0
#include "tdae/env.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>

#include "binary_io.hpp"

namespace tdae {

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kKItem: return "kitem";
    case ScenarioKind::kLabyrinth: return "labyrinth";
    case ScenarioKind::kTwoColor: return "two_color";
    case ScenarioKind::kConstObs: return "const_obs";
    case ScenarioKind::kTabularChain: return "tabular_chain";
  }
  return "unknown";
}

ScenarioKind scenario_kind_from_string(const std::string& name) {
  for (auto k : {ScenarioKind::kKItem, ScenarioKind::kLabyrinth, ScenarioKind::kTwoColor, ScenarioKind::kConstObs,
                 ScenarioKind::kTabularChain}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown scenario kind '" + name + "'");
}

bool TabularChainSpec::is_terminal(Index s) const {
  return std::find(terminal.begin(), terminal.end(), s) != terminal.end();
}

void TabularChainSpec::validate() const {
  const Index n = transitions.rows();
  if (n == 0 || transitions.cols() != n) throw ConfigError("chain transition matrix must be square and non-empty");
  if (rewards.size() != n) throw ConfigError("chain reward vector length must equal the state count");
  if (start < 0 || start >= n) throw ConfigError("chain start state out of range");
  for (Index s : terminal) {
    if (s < 0 || s >= n) throw ConfigError("chain terminal state out of range");
  }
  if (is_terminal(start)) throw ConfigError("chain start state is terminal");
  for (Index r = 0; r < n; ++r) {
    if ((transitions.row(r).array() < 0).any() || std::abs(transitions.row(r).sum() - 1.0) > 1e-9) {
      throw ConfigError("chain transition row " + std::to_string(r) + " is not a probability distribution");
    }
  }
}

bool TabularChainSpec::operator==(const TabularChainSpec& o) const {
  return transitions.rows() == o.transitions.rows() && transitions.cols() == o.transitions.cols() &&
         transitions == o.transitions && rewards.size() == o.rewards.size() && rewards == o.rewards &&
         terminal == o.terminal && start == o.start;
}

TabularChainSpec two_step_chain() {
  TabularChainSpec c;
  c.transitions = Eigen::MatrixXd::Zero(3, 3);
  c.transitions(0, 1) = 1.0;
  c.transitions(1, 2) = 1.0;
  c.transitions(2, 2) = 1.0;
  c.rewards = Eigen::Vector3d(0.0, 1.0, 0.0);
  c.terminal = {2};
  c.start = 0;
  return c;
}

Scenario Scenario::defaults(ScenarioKind kind) {
  Scenario s;
  s.kind = kind;
  switch (kind) {
    case ScenarioKind::kKItem:
    case ScenarioKind::kTwoColor:
      s.timeout = 200;
      break;
    case ScenarioKind::kLabyrinth:
      s.timeout = 250;
      s.full_view = true;
      break;
    case ScenarioKind::kConstObs:
      s.timeout = 64;
      break;
    case ScenarioKind::kTabularChain:
      s.timeout = 64;
      s.chain = two_step_chain();
      break;
  }
  return s;
}

std::array<Index, 3> Scenario::observation_shape() const {
  switch (kind) {
    case ScenarioKind::kConstObs: return const_shape;
    case ScenarioKind::kTabularChain: return {1, 1, chain.transitions.rows()};
    default: break;
  }
  if (full_view) return {3, grid_size, grid_size};
  return {3, 2 * view_radius + 1, 2 * view_radius + 1};
}

Index Scenario::observation_size() const {
  const auto s = observation_shape();
  return s[0] * s[1] * s[2];
}

void Scenario::validate() const {
  if (timeout < 1) throw ConfigError("timeout must be at least 1");
  switch (kind) {
    case ScenarioKind::kConstObs:
      for (Index d : const_shape) {
        if (d <= 0) throw ConfigError("const_shape must be positive");
      }
      if (!(const_value >= 0.0 && const_value <= 1.0)) throw ConfigError("const_value must lie in [0, 1]");
      return;
    case ScenarioKind::kTabularChain:
      chain.validate();
      return;
    default:
      break;
  }
  if (grid_size < 5) throw ConfigError("grid_size must be at least 5");
  if (view_radius < 0 || 2 * view_radius + 1 > grid_size) {
    throw ConfigError("view window (2*view_radius+1) must not exceed grid_size");
  }
  if (kind == ScenarioKind::kKItem) {
    if (item_count < 1 || item_count > static_cast<Index>(palette::kItems.size())) {
      throw ConfigError("KItem item_count must be in [1, " + std::to_string(palette::kItems.size()) + "]");
    }
  }
  if (kind == ScenarioKind::kTwoColor) {
    if (item_count < 1) throw ConfigError("TwoColor item_count must be positive");
    if (indicator_visible_steps < 0) throw ConfigError("indicator_visible_steps must be non-negative");
  }
}

Env::Env(Scenario scenario) : scenario_(std::move(scenario)) { scenario_.validate(); }

namespace {

struct Pos {
  Index r, c;
};

constexpr std::array<Pos, 4> kMoves{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

void fill_walls(EnvState& s, Index n) {
  s.rows = s.cols = n;
  s.cells.assign(static_cast<std::size_t>(n * n), Cell::kFloor);
  s.item_color.assign(static_cast<std::size_t>(n * n), -1);
  for (Index i = 0; i < n; ++i) {
    s.cells[static_cast<std::size_t>(i)] = Cell::kWall;
    s.cells[static_cast<std::size_t>((n - 1) * n + i)] = Cell::kWall;
    s.cells[static_cast<std::size_t>(i * n)] = Cell::kWall;
    s.cells[static_cast<std::size_t>(i * n + n - 1)] = Cell::kWall;
  }
}

// Random distinct floor cells, drawn by partial Fisher-Yates over the
// row-major list of free cells.
std::vector<Pos> draw_free_cells(const EnvState& s, Index count, Rng& rng) {
  std::vector<Pos> free;
  for (Index r = 0; r < s.rows; ++r) {
    for (Index c = 0; c < s.cols; ++c) {
      if (s.cell(r, c) == Cell::kFloor) free.push_back({r, c});
    }
  }
  if (static_cast<Index>(free.size()) < count) {
    throw ConfigError("layout needs " + std::to_string(count) + " free cells but only " + std::to_string(free.size()) +
                      " exist");
  }
  for (Index i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(free.size() - static_cast<std::size_t>(i));
    std::swap(free[static_cast<std::size_t>(i)], free[j]);
  }
  free.resize(static_cast<std::size_t>(count));
  return free;
}

void generate_maze(EnvState& s, Index n, Rng& rng) {
  s.rows = s.cols = n;
  s.cells.assign(static_cast<std::size_t>(n * n), Cell::kWall);
  s.item_color.assign(static_cast<std::size_t>(n * n), -1);
  const Index span = (n - 1) / 2;  // maze cells per side, at odd coordinates
  auto at = [&](Index r, Index c) -> Cell& { return s.cells[static_cast<std::size_t>(r * n + c)]; };
  std::vector<char> visited(static_cast<std::size_t>(span * span), 0);
  std::vector<Pos> stack{{0, 0}};
  visited[0] = 1;
  at(1, 1) = Cell::kFloor;
  while (!stack.empty()) {
    const Pos cur = stack.back();
    std::array<Pos, 4> options;
    std::size_t count = 0;
    for (const auto& m : kMoves) {
      const Pos nb{cur.r + m.r, cur.c + m.c};
      if (nb.r < 0 || nb.c < 0 || nb.r >= span || nb.c >= span) continue;
      if (visited[static_cast<std::size_t>(nb.r * span + nb.c)]) continue;
      options[count++] = nb;
    }
    if (count == 0) {
      stack.pop_back();
      continue;
    }
    const Pos nb = options[rng.below(count)];
    visited[static_cast<std::size_t>(nb.r * span + nb.c)] = 1;
    at(2 * nb.r + 1, 2 * nb.c + 1) = Cell::kFloor;
    at(cur.r + nb.r + 1, cur.c + nb.c + 1) = Cell::kFloor;  // wall between the two cells
    stack.push_back(nb);
  }
}

Pos farthest_cell(const EnvState& s, Pos from) {
  std::vector<Index> dist(static_cast<std::size_t>(s.rows * s.cols), -1);
  std::deque<Pos> queue{from};
  dist[static_cast<std::size_t>(from.r * s.cols + from.c)] = 0;
  Pos best = from;
  Index best_d = 0;
  while (!queue.empty()) {
    const Pos p = queue.front();
    queue.pop_front();
    const Index d = dist[static_cast<std::size_t>(p.r * s.cols + p.c)];
    if (d > best_d) {
      best_d = d;
      best = p;
    }
    for (const auto& m : kMoves) {
      const Pos q{p.r + m.r, p.c + m.c};
      if (s.cell(q.r, q.c) == Cell::kWall) continue;
      auto& dq = dist[static_cast<std::size_t>(q.r * s.cols + q.c)];
      if (dq >= 0) continue;
      dq = d + 1;
      queue.push_back(q);
    }
  }
  return best;
}

void set_pixel(Tensor<double>& img, Index h, Index w, Index y, Index x, const std::array<double, 3>& rgb) {
  for (Index ch = 0; ch < 3; ++ch) img[(ch * h + y) * w + x] = rgb[static_cast<std::size_t>(ch)];
}

}  // namespace

Tensor<double> Env::reset(std::uint64_t seed) {
  const std::uint64_t layout_seed = scenario_.fixed_layout_seed.value_or(seed);
  Rng layout_rng(stream_seed({layout_seed, 0x6c61796f7574ULL}));
  rng_ = Rng(stream_seed({seed, 0x64796e616d6963ULL}));
  state_ = EnvState{};
  switch (scenario_.kind) {
    case ScenarioKind::kConstObs:
      break;
    case ScenarioKind::kTabularChain:
      state_.chain_state = scenario_.chain.start;
      break;
    default:
      reset_grid_world(layout_rng);
      break;
  }
  state_.steps = 0;
  state_.finished = false;
  return render();
}

void Env::reset_grid_world(Rng& rng) {
  const Index n = scenario_.grid_size;
  auto& s = state_;
  if (scenario_.kind == ScenarioKind::kLabyrinth) {
    generate_maze(s, n % 2 == 1 ? n : n - 1, rng);
    if (n % 2 == 0) {  // pad back to the configured size with a wall row/column
      EnvState padded = s;
      fill_walls(padded, n);
      for (Index r = 0; r < n - 1; ++r) {
        for (Index c = 0; c < n - 1; ++c) padded.cells[static_cast<std::size_t>(r * n + c)] = s.cell(r, c);
      }
      s = padded;
    }
    s.agent_row = 1;
    s.agent_col = 1;
    const Pos goal = farthest_cell(s, {1, 1});
    s.cells[static_cast<std::size_t>(goal.r * n + goal.c)] = Cell::kGoal;
    return;
  }

  fill_walls(s, n);
  if (scenario_.kind == ScenarioKind::kKItem) {
    const Index k = scenario_.item_count;
    const auto cells = draw_free_cells(s, k + 1, rng);
    for (Index i = 0; i < k; ++i) {
      const auto& p = cells[static_cast<std::size_t>(i)];
      s.cells[static_cast<std::size_t>(p.r * n + p.c)] = Cell::kItem;
      s.item_color[static_cast<std::size_t>(p.r * n + p.c)] = static_cast<int>(i);
    }
    s.agent_row = cells.back().r;
    s.agent_col = cells.back().c;
    s.items_remaining = k;
    s.next_item = 0;
    return;
  }

  // TwoColor: indicator block somewhere inside, agent starts within view of it.
  const auto ind = draw_free_cells(s, 1, rng).front();
  s.cells[static_cast<std::size_t>(ind.r * n + ind.c)] = Cell::kIndicator;
  s.indicator_row = ind.r;
  s.indicator_col = ind.c;
  s.indicator_color = static_cast<int>(rng.below(2));
  const Index reach = std::max<Index>(1, scenario_.view_radius);
  std::vector<Pos> near;
  for (Index r = ind.r - reach; r <= ind.r + reach; ++r) {
    for (Index c = ind.c - reach; c <= ind.c + reach; ++c) {
      if (r > 0 && c > 0 && r < n - 1 && c < n - 1 && s.cell(r, c) == Cell::kFloor) near.push_back({r, c});
    }
  }
  const Pos start = near[rng.below(near.size())];
  s.agent_row = start.r;
  s.agent_col = start.c;
  s.cells[static_cast<std::size_t>(start.r * n + start.c)] = Cell::kWall;  // reserve while placing items
  const Index per_color = scenario_.item_count;
  const auto cells = draw_free_cells(s, 2 * per_color, rng);
  s.cells[static_cast<std::size_t>(start.r * n + start.c)] = Cell::kFloor;
  for (Index i = 0; i < 2 * per_color; ++i) {
    const auto& p = cells[static_cast<std::size_t>(i)];
    s.cells[static_cast<std::size_t>(p.r * n + p.c)] = Cell::kItem;
    s.item_color[static_cast<std::size_t>(p.r * n + p.c)] = static_cast<int>(i % 2);
  }
  s.items_remaining = 2 * per_color;
}

double Env::move_agent(int action, bool& terminated) {
  auto& s = state_;
  const auto& m = kMoves[static_cast<std::size_t>(action)];
  const Index r = s.agent_row + m.r, c = s.agent_col + m.c;
  const Cell target = s.cell(r, c);
  const bool blocked = target == Cell::kWall || target == Cell::kIndicator;
  if (!blocked) {
    s.agent_row = r;
    s.agent_col = c;
  }
  const auto idx = static_cast<std::size_t>(s.agent_row * s.cols + s.agent_col);

  switch (scenario_.kind) {
    case ScenarioKind::kLabyrinth:
      if (!blocked && target == Cell::kGoal) {
        terminated = true;
        return 1.0;
      }
      return -0.01;
    case ScenarioKind::kKItem: {
      if (blocked || target != Cell::kItem) return 0.0;
      if (s.item_color[idx] != s.next_item) return -0.25;
      s.cells[idx] = Cell::kFloor;
      s.item_color[idx] = -1;
      ++s.next_item;
      --s.items_remaining;
      if (s.items_remaining == 0) {
        terminated = true;
        return 0.5 + 1.0;
      }
      return 0.5;
    }
    case ScenarioKind::kTwoColor: {
      if (blocked || target != Cell::kItem) return 0.0;
      const double reward = s.item_color[idx] == s.indicator_color ? 1.0 : -1.0;
      s.cells[idx] = Cell::kFloor;
      s.item_color[idx] = -1;
      --s.items_remaining;
      terminated = s.items_remaining == 0;
      return reward;
    }
    default:
      return 0.0;
  }
}

StepResult Env::step(int action) {
  if (state_.finished) throw UsageError("step() after the episode ended; call reset() first");
  if (action < 0 || action >= kNumActions) throw DomainError("action " + std::to_string(action) + " out of range");
  StepResult out;
  switch (scenario_.kind) {
    case ScenarioKind::kConstObs:
      break;
    case ScenarioKind::kTabularChain: {
      const auto& chain = scenario_.chain;
      const Index from = state_.chain_state;
      out.reward = chain.rewards[from];
      const double u = rng_.uniform();
      double acc = 0.0;
      Index to = chain.transitions.cols() - 1;
      for (Index j = 0; j < chain.transitions.cols(); ++j) {
        acc += chain.transitions(from, j);
        if (u < acc) {
          to = j;
          break;
        }
      }
      state_.chain_state = to;
      out.terminated = chain.is_terminal(to);
      break;
    }
    default:
      out.reward = move_agent(action, out.terminated);
      break;
  }
  ++state_.steps;
  out.truncated = !out.terminated && state_.steps >= scenario_.timeout;
  state_.finished = out.terminated || out.truncated;
  out.obs = render();
  return out;
}

Tensor<double> Env::render() const {
  const auto shape = scenario_.observation_shape();
  Tensor<double> img({shape[0], shape[1], shape[2]});
  const auto& s = state_;
  switch (scenario_.kind) {
    case ScenarioKind::kConstObs:
      img.data().setConstant(scenario_.const_value);
      return img;
    case ScenarioKind::kTabularChain:
      img[s.chain_state] = 1.0;
      return img;
    default:
      break;
  }
  const bool indicator_visible = s.steps < scenario_.indicator_visible_steps;
  auto color_of = [&](Index r, Index c) -> std::array<double, 3> {
    if (r < 0 || c < 0 || r >= s.rows || c >= s.cols) return palette::kWall;
    if (r == s.agent_row && c == s.agent_col) return palette::kAgent;
    switch (s.cell(r, c)) {
      case Cell::kFloor: return palette::kFloor;
      case Cell::kWall: return palette::kWall;
      case Cell::kGoal: return palette::kGoal;
      case Cell::kIndicator:
        if (!indicator_visible) return palette::kNeutral;
        return s.indicator_color == 0 ? palette::kRed : palette::kGreen;
      case Cell::kItem: {
        const int color = s.item(r, c);
        if (scenario_.kind == ScenarioKind::kTwoColor) return color == 0 ? palette::kRed : palette::kGreen;
        return palette::kItems[static_cast<std::size_t>(color)];
      }
    }
    return palette::kWall;
  };
  const Index h = shape[1], w = shape[2];
  if (scenario_.full_view) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) set_pixel(img, h, w, y, x, color_of(y, x));
    }
  } else {
    const Index rad = scenario_.view_radius;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) set_pixel(img, h, w, y, x, color_of(s.agent_row + y - rad, s.agent_col + x - rad));
    }
  }
  return img;
}

Eigen::VectorXd analytic_values(const TabularChainSpec& chain, double gamma) {
  chain.validate();
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError("discount must lie in [0, 1]");
  const Index n = chain.transitions.rows();
  Eigen::MatrixXd p = chain.transitions;
  Eigen::VectorXd r = chain.rewards;
  for (Index s : chain.terminal) {
    p.row(s).setZero();
    r[s] = 0.0;
  }
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - gamma * p;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible()) throw DomainError("singular Bellman system (gamma = 1 on a non-absorbing chain?)");
  return lu.solve(r);
}

void write_trajectory(const std::filesystem::path& path, const std::array<Index, 3>& shape,
                      const std::vector<TrajectoryStep>& steps) {
  using detail::put_le;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open trajectory file for writing: " + path.string());
  os.write("TDAETRAJ", 8);
  put_le<std::uint32_t>(os, kTrajectoryVersion);
  for (Index d : shape) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  put_le<std::uint64_t>(os, steps.size());
  const Index d = shape[0] * shape[1] * shape[2];
  for (const auto& st : steps) {
    if (st.obs.size() != d) throw DimensionError("trajectory observation size mismatch");
    put_le<std::int32_t>(os, st.action);
    put_le<double>(os, st.reward);
    put_le<std::uint8_t>(os, st.terminated ? 1 : 0);
    put_le<std::uint8_t>(os, st.truncated ? 1 : 0);
    for (Index i = 0; i < d; ++i) put_le<double>(os, st.obs[i]);
  }
  if (!os) throw std::runtime_error("failed writing trajectory: " + path.string());
}

std::vector<TrajectoryStep> read_trajectory(const std::filesystem::path& path, std::array<Index, 3>* shape_out) {
  using detail::get_le;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open trajectory file: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::string(magic, 8) != "TDAETRAJ") throw ConfigError("not a trajectory file");
  if (get_le<std::uint32_t>(is) != kTrajectoryVersion) throw ConfigError("unsupported trajectory version");
  std::array<Index, 3> shape{};
  for (auto& d : shape) d = get_le<std::uint32_t>(is);
  const auto count = get_le<std::uint64_t>(is);
  std::vector<TrajectoryStep> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    TrajectoryStep st;
    st.action = get_le<std::int32_t>(is);
    st.reward = get_le<double>(is);
    st.terminated = get_le<std::uint8_t>(is) != 0;
    st.truncated = get_le<std::uint8_t>(is) != 0;
    st.obs = Tensor<double>({shape[0], shape[1], shape[2]});
    for (Index i = 0; i < st.obs.size(); ++i) st.obs[i] = get_le<double>(is);
    out.push_back(std::move(st));
  }
  if (shape_out) *shape_out = shape;
  return out;
}

}  // namespace tdae
