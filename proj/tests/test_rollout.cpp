// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "tdae/gradcheck.hpp"
#include "tdae/rollout.hpp"

using namespace tdae;

namespace {

using T = Tensor<double>;

NetworkConfig small_net(std::array<Index, 3> shape, Index aux_heads = 0) {
  NetworkConfig c;
  c.input_shape = shape;
  c.conv_layers = {{4, 2, 1}, {4, 2, 1}};
  c.fc_size = 16;
  c.hidden_size = 8;
  c.decoder_sizes = {8, 8};
  c.aux_heads = aux_heads;
  return c;
}

Scenario kitem() { return Scenario::defaults(ScenarioKind::kKItem); }

void expect_same_batch(const SegmentBatch<double>& a, const SegmentBatch<double>& b) {
  EXPECT_EQ(a.observations.data(), b.observations.data());
  EXPECT_EQ(a.actions, b.actions);
  EXPECT_EQ(a.rewards, b.rewards);
  EXPECT_EQ(a.terminated, b.terminated);
  EXPECT_EQ(a.truncated, b.truncated);
  EXPECT_EQ(a.episode_start, b.episode_start);
  EXPECT_EQ(a.final_obs.data(), b.final_obs.data());
  EXPECT_EQ(a.bootstrap_obs.data(), b.bootstrap_obs.data());
  EXPECT_EQ(a.initial_hidden.data(), b.initial_hidden.data());
}

}  // namespace

TEST(RolloutConfig, BatchArithmetic) {
  RolloutConfig c;
  EXPECT_EQ(c.transitions_per_update(), 2048);
  c.segment_length = 8;
  EXPECT_EQ(c.transitions_per_update(), 128);
  c.workers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(CollectSegment, FullSizeBatch) {
  const auto params = init_params<double>(1, small_net({3, 5, 5}));
  auto workers = make_workers<double>(kitem(), 16, 3, params.config);
  RolloutConfig rc;
  const auto seg = collect_segment(params, workers, rc);
  EXPECT_EQ(seg.batch.transitions(), 2048);
  EXPECT_EQ(seg.batch.observations.shape(), (Shape{2048, 3, 5, 5}));
  seg.batch.validate();
}

TEST(CollectSegment, SingleTransitionBatchTrains) {
  auto params = init_params<double>(1, small_net({3, 5, 5}, 1));
  auto workers = make_workers<double>(kitem(), 1, 3, params.config);
  RolloutConfig rc;
  rc.workers = 1;
  rc.segment_length = 1;
  const auto seg = collect_segment(std::as_const(params), workers, rc);
  EXPECT_EQ(seg.batch.transitions(), 1);
  EXPECT_TRUE(seg.batch.needs_next_eval(0));
  RmsProp<double> opt(params.params, {});
  TrainSettings ts;
  ts.aux = {{0.9, 1.0}};
  const auto before = params.params.checksum();
  const auto stats = train_update(params, opt, seg.batch, ts, 0);
  EXPECT_TRUE(std::isfinite(stats.total));
  EXPECT_NE(params.params.checksum(), before);
}

TEST(CollectSegment, ObservationShapeMustMatchNetwork) {
  const auto params = init_params<double>(1, small_net({3, 7, 7}));
  EXPECT_THROW(make_workers<double>(kitem(), 2, 0, params.config), ConfigError);
}

TEST(CollectSegment, DeterministicGivenSeeds) {
  const auto params = init_params<double>(2, small_net({3, 5, 5}));
  for (auto mode : {ActionSelection::kArgmax, ActionSelection::kSample}) {
    RolloutConfig rc;
    rc.workers = 4;
    rc.segment_length = 40;
    rc.action_selection = mode;
    auto wa = make_workers<double>(kitem(), 4, 9, params.config);
    auto wb = make_workers<double>(kitem(), 4, 9, params.config);
    for (int k = 0; k < 2; ++k) expect_same_batch(collect_segment(params, wa, rc).batch,
                                                  collect_segment(params, wb, rc).batch);
  }
}

TEST(CollectSegment, SerialAndParallelBitwiseEqual) {
  auto pa = init_params<double>(4, small_net({3, 5, 5}, 1));
  auto pb = pa;
  RolloutConfig serial;
  serial.workers = 6;
  serial.segment_length = 12;
  RolloutConfig parallel = serial;
  parallel.parallel_envs = true;
  auto wa = make_workers<double>(Scenario::defaults(ScenarioKind::kTwoColor), 6, 5, pa.config);
  auto wb = make_workers<double>(Scenario::defaults(ScenarioKind::kTwoColor), 6, 5, pb.config);
  RmsProp<double> oa(pa.params, {}), ob(pb.params, {});
  TrainSettings ts;
  ts.aux = {{0.5, 10.0}};
  for (int k = 0; k < 4; ++k) {
    const auto sa = collect_segment(std::as_const(pa), wa, serial);
    const auto sb = collect_segment(std::as_const(pb), wb, parallel);
    expect_same_batch(sa.batch, sb.batch);
    train_update(pa, oa, sa.batch, ts, static_cast<std::uint64_t>(k));
    train_update(pb, ob, sb.batch, ts, static_cast<std::uint64_t>(k));
    ASSERT_EQ(pa.params.checksum(), pb.params.checksum());
  }
}

TEST(CollectSegment, EpisodeBoundariesRecorded) {
  Scenario sc = Scenario::defaults(ScenarioKind::kConstObs);
  sc.timeout = 5;
  NetworkConfig net = small_net({3, 5, 5});
  const auto params = init_params<double>(0, net);
  auto workers = make_workers<double>(sc, 2, 0, net);
  RolloutConfig rc;
  rc.workers = 2;
  rc.segment_length = 12;
  const auto seg = collect_segment(params, workers, rc);
  const auto& b = seg.batch;
  for (Index t = 0; t < 12; ++t) {
    for (Index w = 0; w < 2; ++w) {
      const auto i = static_cast<std::size_t>(b.row(t, w));
      EXPECT_EQ(b.truncated[i], (t + 1) % 5 == 0) << t;
      EXPECT_EQ(b.episode_start[i], t % 5 == 0) << t;
      if (b.truncated[i]) {
        EXPECT_EQ(b.final_obs.matrix().row(b.row(t, w)).maxCoeff(), 0.6);
        EXPECT_TRUE(b.needs_next_eval(b.row(t, w)));
      }
    }
  }
  ASSERT_EQ(seg.completed.size(), 4u);
  EXPECT_EQ(seg.completed[0].length, 5);
  EXPECT_TRUE(seg.completed[0].truncated);
  EXPECT_EQ(workers[0].episode_length, 2);
}

TEST(CollectSegment, NoTransitionDroppedOrDuplicated) {
  const auto params = init_params<double>(6, small_net({3, 5, 5}));
  auto workers = make_workers<double>(kitem(), 3, 1, params.config);
  RolloutConfig rc;
  rc.workers = 3;
  rc.segment_length = 50;
  Index frames = 0, episode_frames = 0;
  for (int k = 0; k < 6; ++k) {
    const auto seg = collect_segment(params, workers, rc);
    frames += seg.batch.transitions();
    for (const auto& e : seg.completed) episode_frames += e.length;
  }
  for (const auto& w : workers) episode_frames += w.episode_length;
  EXPECT_EQ(frames, 6 * 3 * 50);
  EXPECT_EQ(episode_frames, frames);
}

// The hidden state entering a segment is the one left by the previous
// segment: re-running the GRU over segment k from its initial state (with
// resets) must land on segment k+1's initial state.
TEST(CollectSegment, HiddenStateCarriesAcrossSegments) {
  const auto params = init_params<double>(7, small_net({3, 5, 5}));
  auto workers = make_workers<double>(Scenario::defaults(ScenarioKind::kTwoColor), 3, 2, params.config);
  RolloutConfig rc;
  rc.workers = 3;
  rc.segment_length = 10;
  auto prev = collect_segment(params, workers, rc);
  EXPECT_EQ(prev.batch.initial_hidden.data().cwiseAbs().maxCoeff(), 0.0);
  for (int k = 0; k < 4; ++k) {
    const auto next = collect_segment(params, workers, rc);
    const auto& b = prev.batch;
    T h = b.initial_hidden;
    const Index hs = 8, d = 75;
    for (Index t = 0; t < b.length; ++t) {
      T obs({3, 3, 5, 5});
      obs.data() = b.observations.data().segment(t * 3 * d, 3 * d);
      for (Index w = 0; w < 3; ++w) {
        if (b.episode_start[static_cast<std::size_t>(b.row(t, w))]) h.data().segment(w * hs, hs).setZero();
      }
      h = policy_forward(params, obs, h, false).hidden;
    }
    for (Index w = 0; w < 3; ++w) {
      const bool cut = b.done(b.row(b.length - 1, w));
      const auto got = next.batch.initial_hidden.data().segment(w * hs, hs);
      if (cut) {
        EXPECT_EQ(got.cwiseAbs().maxCoeff(), 0.0);
      } else {
        EXPECT_EQ(got, h.data().segment(w * hs, hs));
        EXPECT_GT(got.cwiseAbs().maxCoeff(), 0.0);
      }
    }
    prev = next;
  }
}

TEST(CollectSegment, EnvironmentErrorsNameTheWorker) {
  const auto params = init_params<double>(0, small_net({3, 5, 5}));
  auto workers = make_workers<double>(kitem(), 3, 0, params.config);
  workers[2].env.mutable_state().finished = true;
  RolloutConfig rc;
  rc.workers = 3;
  rc.segment_length = 2;
  try {
    collect_segment(params, workers, rc);
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("worker 2"), std::string::npos) << e.what();
  }
}

TEST(SelectAction, ArgmaxTakesFirstMaximumWithoutRng) {
  Rng a(1), b(1);
  Eigen::RowVectorXd p(4);
  p << 0.1, 0.4, 0.4, 0.1;
  EXPECT_EQ(select_action(p, ActionSelection::kArgmax, a), 1);
  EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(SelectAction, SamplingFollowsProbabilities) {
  Rng rng(3);
  Eigen::RowVectorXd p(4);
  p << 0.1, 0.2, 0.3, 0.4;
  std::array<int, 4> counts{};
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(select_action(p, ActionSelection::kSample, rng))];
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(counts[i] / double(n), p[static_cast<Index>(i)], 0.01);
}

TEST(TrainUpdate, ZeroWeightHeadMatchesNoHeadBitwise) {
  auto with_head = init_params<double>(11, small_net({3, 5, 5}, 1));
  auto without = init_params<double>(11, small_net({3, 5, 5}, 0));
  auto wa = make_workers<double>(kitem(), 4, 8, with_head.config);
  auto wb = make_workers<double>(kitem(), 4, 8, without.config);
  RolloutConfig rc;
  rc.workers = 4;
  rc.segment_length = 16;
  RmsProp<double> oa(with_head.params, {}), ob(without.params, {});
  TrainSettings ta, tb;
  ta.aux = {{0.9, 0.0}};
  for (int k = 0; k < 5; ++k) {
    const auto sa = collect_segment(std::as_const(with_head), wa, rc);
    const auto sb = collect_segment(std::as_const(without), wb, rc);
    expect_same_batch(sa.batch, sb.batch);
    const auto ua = train_update(with_head, oa, sa.batch, ta, static_cast<std::uint64_t>(k));
    const auto ub = train_update(without, ob, sb.batch, tb, static_cast<std::uint64_t>(k));
    EXPECT_EQ(ua.total, ub.total);
    EXPECT_EQ(ua.policy_loss, ub.policy_loss);
    EXPECT_EQ(ua.tdae_weighted, 0.0);
    EXPECT_GT(ua.tdae_loss, 0.0);
    for (const auto& p : without.params) {
      ASSERT_EQ(p.value.data(), with_head.params.at(p.name).value.data()) << p.name << " after update " << k;
    }
  }
}

TEST(TrainUpdate, ReproducibleAcrossRuns) {
  auto run = [] {
    auto params = init_params<double>(12, small_net({3, 5, 5}, 1));
    auto workers = make_workers<double>(kitem(), 3, 4, params.config);
    RolloutConfig rc;
    rc.workers = 3;
    rc.segment_length = 8;
    RmsProp<double> opt(params.params, {});
    TrainSettings ts;
    ts.aux = {{0.5, 100.0}};
    std::vector<double> totals;
    for (int k = 0; k < 3; ++k) {
      const auto seg = collect_segment(std::as_const(params), workers, rc);
      totals.push_back(train_update(params, opt, seg.batch, ts, static_cast<std::uint64_t>(k)).total);
    }
    return std::make_pair(params.params.checksum(), totals);
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainUpdate, FloatPrecisionRuns) {
  auto params = init_params<float>(13, small_net({3, 5, 5}, 1));
  auto workers = make_workers<float>(kitem(), 2, 4, params.config);
  RolloutConfig rc;
  rc.workers = 2;
  rc.segment_length = 8;
  RmsProp<float> opt(params.params, {});
  TrainSettings ts;
  ts.aux = {{0.9, 1.0}};
  const auto seg = collect_segment(std::as_const(params), workers, rc);
  EXPECT_TRUE(std::isfinite(train_update(params, opt, seg.batch, ts, 0).total));
}

TEST(TrainUpdate, MismatchedHeadSettingsRejected) {
  auto params = init_params<double>(1, small_net({3, 5, 5}, 1));
  auto workers = make_workers<double>(kitem(), 1, 0, params.config);
  RolloutConfig rc;
  rc.workers = 1;
  rc.segment_length = 2;
  RmsProp<double> opt(params.params, {});
  const auto seg = collect_segment(std::as_const(params), workers, rc);
  EXPECT_THROW(train_update(params, opt, seg.batch, TrainSettings{}, 0), ConfigError);
}

// Linear value head on one-hot chain states converges to the Bellman
// solution (I - gamma P)^-1 r.
TEST(TrainUpdate, ChainValuesReachBellmanSolution) {
  const Scenario sc = Scenario::defaults(ScenarioKind::kTabularChain);
  for (double gamma : {0.5, 0.9}) {
    NetworkConfig net;
    net.input_shape = sc.observation_shape();
    net.trunk = TrunkKind::kNone;
    net.use_gru = false;
    auto params = init_params<double>(1, net);
    auto workers = make_workers<double>(sc, 4, 1, net);
    RolloutConfig rc;
    rc.workers = 4;
    rc.segment_length = 8;
    RmsPropConfig oc;
    oc.learning_rate = 3e-3;
    RmsProp<double> opt(params.params, oc);
    TrainSettings ts;
    ts.gamma = gamma;
    for (int k = 0; k < 50000 / 32; ++k) {
      const auto seg = collect_segment(std::as_const(params), workers, rc);
      train_update(params, opt, seg.batch, ts, static_cast<std::uint64_t>(k));
    }
    const auto want = analytic_values(sc.chain, gamma);
    T obs({2, 1, 1, 3});
    obs[0] = 1.0;
    obs[4] = 1.0;
    const auto out = policy_forward(params, obs, T({2, 0}), false);
    EXPECT_NEAR(out.values[0], want[0], 1e-2) << "gamma " << gamma;
    EXPECT_NEAR(out.values[1], want[1], 1e-2) << "gamma " << gamma;
  }
}

TEST(SegmentLoss, FrozenTargetsReproduceTheLoss) {
  auto params = init_params<double>(14, small_net({3, 5, 5}, 2));
  auto workers = make_workers<double>(kitem(), 3, 6, params.config);
  RolloutConfig rc;
  rc.workers = 3;
  rc.segment_length = 5;
  collect_segment(std::as_const(params), workers, rc);
  const auto seg = collect_segment(std::as_const(params), workers, rc);
  TrainSettings ts;
  ts.aux = {{0.0, 2.0}, {0.9, 5.0}};
  Graph<double> g1(false), g2(false);
  const auto own = segment_loss(g1, params, seg.batch, ts);
  const auto again = segment_loss(g2, params, seg.batch, ts, &own.targets);
  EXPECT_EQ(own.loss.total, again.loss.total);
  EXPECT_EQ(own.targets.returns.size(), 15u);
  EXPECT_EQ(own.targets.psi_next.size(), 2u);
  SegmentTargets<double> bad = own.targets;
  bad.baseline.pop_back();
  Graph<double> g3(false);
  EXPECT_THROW(segment_loss(g3, params, seg.batch, ts, &bad), DimensionError);
}

TEST(SegmentLoss, GradientsMatchFiniteDifferences) {
  NetworkConfig net = tdae::testing::tiny_network({3, 3, 3}, 1);
  auto params = init_params<double>(15, net);
  auto batch = tdae::testing::random_batch(2, 4, {3, 3, 3}, 8, 0.3, net.hidden_size);
  TrainSettings ts;
  ts.aux = {{0.5, 4.0}};
  SegmentTargets<double> frozen;
  {
    Graph<double> g(false);
    frozen = segment_loss(g, params, batch, ts).targets;
  }
  const auto r = check_gradients(
      [&](Graph<double>& g) { return segment_loss(g, params, batch, ts, &frozen).loss.total_var; }, params.params);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
}
