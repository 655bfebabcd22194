// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "tdae/experiment.hpp"
#include "tdae/report.hpp"

using namespace tdae;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class ExperimentTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() /
            ("tdae_experiment_" + std::to_string(::getpid()) + "_" + info->name());
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  // K-Item with a small network and 8 transitions per update.
  ExperimentConfig small(const std::string& sub) const {
    ExperimentConfig c;
    c.name = sub;
    c.scenario = Scenario::defaults(ScenarioKind::kKItem);
    c.scenario.timeout = 20;
    c.network.conv_layers = {{4, 2, 1}};
    c.network.fc_size = 16;
    c.network.hidden_size = 8;
    c.network.decoder_sizes = {8};
    c.rollout = RolloutConfig{2, 4};
    c.total_frames = 40;
    c.eval_every_frames = 16;
    c.eval_episodes = 3;
    c.output_dir = root_ / sub;
    c.resolve();
    return c;
  }

  fs::path root_;
};

}  // namespace

TEST_F(ExperimentTest, SingleUpdateWhenFramesEqualBatch) {
  auto c = small("one");
  c.total_frames = 8;
  const auto r = run_experiment(c, 0);
  EXPECT_EQ(r.updates, 1u);
  EXPECT_EQ(r.frames, 8u);
  ASSERT_EQ(r.evals.size(), 1u);
  EXPECT_EQ(read_metrics_csv(r.paths.metrics).size(), 1u);
  EXPECT_NE(slurp(r.paths.manifest).find("\"complete\""), std::string::npos);
}

TEST_F(ExperimentTest, EvaluationCadenceAndFrameCount) {
  const auto r = run_experiment(small("cadence"), 3);
  EXPECT_EQ(r.updates, 5u);
  EXPECT_EQ(r.frames, 40u);
  const auto rows = read_metrics_csv(r.paths.metrics);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].frames, 16u);
  EXPECT_EQ(rows[1].frames, 32u);
  EXPECT_EQ(rows[2].frames, 40u);
  for (const auto& row : rows) {
    EXPECT_EQ(row.seed, 3u);
    EXPECT_EQ(row.wall_time, 0.0);
    EXPECT_GT(row.entropy, 0.0);
    EXPECT_EQ(row.tdae_loss, 0.0);
  }
  std::ifstream updates(r.paths.updates);
  std::string line;
  int lines = 0;
  while (std::getline(updates, line)) ++lines;
  EXPECT_EQ(lines, 1 + 5);
}

TEST_F(ExperimentTest, MetricsByteIdenticalAcrossReruns) {
  auto a = small("a");
  auto b = small("b");
  a.auxiliary = b.auxiliary = {{0.9, 10.0}};
  a.resolve();
  b.resolve();
  const auto ra = run_experiment(a, 5);
  const auto rb = run_experiment(b, 5);
  EXPECT_EQ(slurp(ra.paths.metrics), slurp(rb.paths.metrics));
  EXPECT_EQ(slurp(ra.paths.updates), slurp(rb.paths.updates));
  EXPECT_EQ(slurp(ra.paths.episodes), slurp(rb.paths.episodes));
  EXPECT_EQ(slurp(ra.paths.evals), slurp(rb.paths.evals));
}

TEST_F(ExperimentTest, ZeroWeightHeadReproducesBaselineMetrics) {
  auto base = small("base");
  auto zero = small("zero");
  zero.auxiliary = {{0.9, 0.0}};
  zero.resolve();
  const auto rb = run_experiment(base, 1);
  const auto rz = run_experiment(zero, 1);
  EXPECT_EQ(slurp(rb.paths.metrics), slurp(rz.paths.metrics));
  EXPECT_EQ(slurp(rb.paths.episodes), slurp(rz.paths.episodes));
}

TEST_F(ExperimentTest, Float32RunCompletes) {
  auto c = small("f32");
  c.precision = Precision::kFloat32;
  c.auxiliary = {{0.5, 1.0}};
  c.resolve();
  const auto r = run_experiment(c, 0);
  EXPECT_EQ(r.updates, 5u);
  for (const auto& e : r.evals) EXPECT_TRUE(std::isfinite(e.mean_return));
}

TEST_F(ExperimentTest, CheckpointRestoresEvaluation) {
  auto c = small("ck");
  c.auxiliary = {{0.5, 1.0}};
  c.resolve();
  const auto r = run_experiment(c, 2);
  const auto info = load_checkpoint(r.paths.checkpoints / "frames_40.bin");
  EXPECT_EQ(info.config, c);
  EXPECT_EQ(info.seed, 2u);
  EXPECT_EQ(info.frames, 40u);
  const auto again = evaluate(info.params, c.scenario, c.eval_episodes, 2, c.eval_action_selection);
  EXPECT_EQ(again.returns, r.evals.back().returns);
}

TEST_F(ExperimentTest, InvalidConfigRefusedBeforeWriting) {
  auto c = small("bad");
  c.total_frames = 4;
  EXPECT_THROW(run_experiment(c, 0), ConfigError);
}

TEST(Evaluate, LeavesParametersUntouched) {
  NetworkConfig net;
  net.input_shape = {3, 5, 5};
  net.conv_layers = {{4, 2, 1}};
  net.aux_heads = 1;
  const auto params = init_params<double>(3, net);
  const auto before = params.params.checksum();
  const auto a = evaluate(params, Scenario::defaults(ScenarioKind::kKItem), 4, 9);
  EXPECT_EQ(params.params.checksum(), before);
  const auto b = evaluate(params, Scenario::defaults(ScenarioKind::kKItem), 4, 9);
  EXPECT_EQ(a.returns, b.returns);
  EXPECT_EQ(a.returns.size(), 4u);
}

TEST(Evaluate, ConstObsScoresZero) {
  Scenario sc = Scenario::defaults(ScenarioKind::kConstObs);
  NetworkConfig net;
  net.input_shape = sc.observation_shape();
  net.conv_layers = {{4, 2, 1}};
  const auto e = evaluate(init_params<double>(0, net), sc, 5, 0);
  EXPECT_EQ(e.mean_return, 0.0);
  EXPECT_EQ(e.return_stddev, 0.0);
}

TEST(Evaluate, ArgmaxOnFixedLayoutHasNoSpread) {
  Scenario sc = Scenario::defaults(ScenarioKind::kKItem);
  sc.fixed_layout_seed = 12;
  NetworkConfig net;
  net.input_shape = sc.observation_shape();
  net.conv_layers = {{4, 2, 1}};
  const auto e = evaluate(init_params<double>(4, net), sc, 6, 1, ActionSelection::kArgmax);
  EXPECT_EQ(e.return_stddev, 0.0);
  for (double v : e.returns) EXPECT_EQ(v, e.returns[0]);
}

TEST(Evaluate, StatisticsMatchReturns) {
  Scenario sc = Scenario::defaults(ScenarioKind::kTwoColor);
  NetworkConfig net;
  net.input_shape = sc.observation_shape();
  net.conv_layers = {{4, 2, 1}};
  const auto e = evaluate(init_params<double>(4, net), sc, 7, 2);
  double mean = 0.0, var = 0.0;
  for (double v : e.returns) mean += v / 7.0;
  for (double v : e.returns) var += (v - mean) * (v - mean) / 7.0;
  EXPECT_NEAR(e.mean_return, mean, 1e-12);
  EXPECT_NEAR(e.return_stddev, std::sqrt(var), 1e-12);
  EXPECT_THROW(evaluate(init_params<double>(4, net), sc, 0, 2), ConfigError);
}

TEST(Sweep, EmptyAxesGiveSingleBaseRun) {
  ExperimentConfig c;
  c.scenario = Scenario::defaults(ScenarioKind::kLabyrinth);
  c.output_dir = "out";
  c.resolve();
  const auto pts = expand_sweep(c);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].label, "base");
  EXPECT_FALSE(pts[0].baseline);
  EXPECT_EQ(pts[0].config.output_dir, fs::path("out/base"));
}

TEST(Sweep, LambdaGridForZeroGamma) {
  ExperimentConfig c;
  c.scenario = Scenario::defaults(ScenarioKind::kLabyrinth);
  c.sweep.gamma_aux = {0.0};
  c.sweep.lambda = {1, 10, 100, 500, 1000};
  c.sweep.seeds = {0, 1};
  c.resolve();
  const auto pts = expand_sweep(c);
  ASSERT_EQ(pts.size(), 5u);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ASSERT_EQ(pts[i].config.auxiliary.size(), 1u);
    EXPECT_EQ(pts[i].config.auxiliary[0].gamma_aux, 0.0);
    EXPECT_EQ(pts[i].config.auxiliary[0].lambda, c.sweep.lambda[i]);
    EXPECT_EQ(pts[i].config.network.aux_heads, 1);
    EXPECT_EQ(pts[i].config.seeds, (std::vector<std::uint64_t>{0, 1}));
    EXPECT_TRUE(pts[i].config.sweep.empty());
  }
  EXPECT_EQ(pts[1].label, "g0_l10");
}

TEST(Sweep, ProductWithBaselinePerSegmentLength) {
  ExperimentConfig c;
  c.scenario = Scenario::defaults(ScenarioKind::kLabyrinth);
  c.sweep.gamma_aux = {0.5, 0.9};
  c.sweep.lambda = {10, 100, 500, 1000};
  c.sweep.segment_length = {8, 16};
  c.sweep.include_baseline = true;
  c.resolve();
  const auto pts = expand_sweep(c);
  EXPECT_EQ(pts.size(), 2u * (1 + 2 * 4));
  int baselines = 0;
  for (const auto& p : pts) {
    if (p.baseline) {
      ++baselines;
      EXPECT_TRUE(p.config.auxiliary.empty());
      EXPECT_EQ(p.config.network.aux_heads, 0);
    }
    EXPECT_EQ(p.config.rollout.segment_length, *p.segment_length);
  }
  EXPECT_EQ(baselines, 2);
}

TEST(Sweep, DuplicateOutputPathsRejected) {
  ExperimentConfig c;
  c.scenario = Scenario::defaults(ScenarioKind::kLabyrinth);
  c.sweep.lambda = {10, 10};
  c.resolve();
  EXPECT_THROW(expand_sweep(c), ConfigError);
}

TEST(Sweep, SummaryPicksBestLambdaPerGamma) {
  ExperimentConfig c;
  c.scenario = Scenario::defaults(ScenarioKind::kLabyrinth);
  c.sweep.gamma_aux = {0.0, 0.9};
  c.sweep.lambda = {1, 10};
  c.sweep.include_baseline = true;
  c.resolve();
  const auto pts = expand_sweep(c);
  ASSERT_EQ(pts.size(), 5u);
  // order: baseline, (0, 1), (0, 10), (0.9, 1), (0.9, 10)
  const std::vector<std::vector<double>> finals{{9, 9}, {1, 3}, {4, 4}, {5, 7}, {0, 2}};
  const auto s = summarize_sweep(pts, finals);
  ASSERT_EQ(s.rows.size(), 5u);
  EXPECT_EQ(s.rows[1].final_mean, 2.0);
  EXPECT_NEAR(s.rows[1].final_stderr, 1.0, 1e-15);  // s = sqrt(2), k = 2
  EXPECT_EQ(s.rows[2].final_stderr, 0.0);
  ASSERT_EQ(s.best.size(), 2u);
  EXPECT_EQ(s.best[0].gamma_aux, 0.0);
  EXPECT_EQ(s.best[0].lambda, 10.0);
  EXPECT_EQ(s.best[1].gamma_aux, 0.9);
  EXPECT_EQ(s.best[1].lambda, 1.0);
  EXPECT_THROW(summarize_sweep(pts, {{1.0}}), DimensionError);
}

TEST(Sweep, RunWritesSummary) {
  const fs::path root = fs::temp_directory_path() / ("tdae_sweep_" + std::to_string(::getpid()));
  fs::remove_all(root);
  ExperimentConfig c;
  c.scenario = Scenario::defaults(ScenarioKind::kConstObs);
  c.network.conv_layers = {{2, 2, 1}};
  c.network.fc_size = 8;
  c.network.hidden_size = 4;
  c.network.decoder_sizes = {4};
  c.rollout = RolloutConfig{2, 2};
  c.total_frames = 8;
  c.eval_every_frames = 8;
  c.eval_episodes = 1;
  c.scenario.timeout = 3;
  c.output_dir = root;
  c.sweep.lambda = {0, 1};
  c.sweep.gamma_aux = {0.5};
  c.sweep.seeds = {0, 1};
  c.sweep.jobs = 2;
  c.resolve();
  const auto s = run_sweep(c);
  EXPECT_EQ(s.rows.size(), 2u);
  EXPECT_TRUE(fs::exists(root / "summary.csv"));
  EXPECT_TRUE(fs::exists(root / "summary.md"));
  EXPECT_TRUE(fs::exists(root / "g0.5_l1" / "seed_1" / "metrics.csv"));
  fs::remove_all(root);
}
