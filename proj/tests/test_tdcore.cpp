// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "tdae/gradcheck.hpp"

using namespace tdae;
using tdae::testing::random_batch;
using tdae::testing::random_tensor;

namespace {

using T = Tensor<double>;
using Flags = std::vector<std::uint8_t>;

std::vector<double> next_values_for(const SegmentBatch<double>& b, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(b.transitions()), std::numeric_limits<double>::quiet_NaN());
  for (Index r = 0; r < b.transitions(); ++r) {
    if (b.needs_next_eval(r)) v[static_cast<std::size_t>(r)] = rng.uniform(-5.0, 5.0);
  }
  return v;
}

}  // namespace

TEST(Returns, WorkedExample) {
  const std::vector<double> r{1, 2, 3}, v{0, 0, 10};
  const Flags none(3, 0);
  const auto g = discounted_returns(r, none, none, v, 0.9);
  EXPECT_NEAR(g[0], 12.52, 1e-12);
  EXPECT_NEAR(g[1], 2 + 0.9 * 3 + 0.81 * 10, 1e-12);
  EXPECT_NEAR(g[2], 3 + 9.0, 1e-12);
}

TEST(Returns, ZeroDiscountGivesRewards) {
  const std::vector<double> r{0.5, -1, 2, 7}, v{3, 3, 3, 3};
  const Flags none(4, 0), trunc{0, 1, 0, 0};
  EXPECT_EQ(discounted_returns(r, none, trunc, v, 0.0), r);
}

TEST(Returns, TerminationCutsTheReturn) {
  const std::vector<double> v{0, 0, 0, 100};
  const Flags term{0, 1, 0, 0}, none(4, 0);
  const auto a = discounted_returns(std::vector<double>{1, 2, 3, 4}, term, none, v, 0.9);
  const auto b = discounted_returns(std::vector<double>{1, 2, -50, 80}, term, none, v, 0.9);
  EXPECT_EQ(a[1], 2.0);
  EXPECT_EQ(a[1], b[1]);
  EXPECT_EQ(a[0], b[0]);
  EXPECT_NEAR(a[0], 1 + 0.9 * 2, 1e-15);
}

TEST(Returns, TruncationBootstrapsFromNextValue) {
  const std::vector<double> r{1, 1, 1}, v{0, 4, 2};
  const Flags none(3, 0), trunc{0, 1, 0};
  const auto g = discounted_returns(r, none, trunc, v, 0.5);
  EXPECT_NEAR(g[1], 1 + 0.5 * 4, 1e-15);
  EXPECT_NEAR(g[0], 1 + 0.5 * 3, 1e-15);
  EXPECT_NEAR(g[2], 1 + 0.5 * 2, 1e-15);
}

TEST(Returns, OracleEdgeCases) {
  const Flags term{1}, none1(1, 0);
  EXPECT_EQ(brute_force_return_oracle(std::vector<double>{3.5}, term, none1, std::vector<double>{9}, 0.9),
            std::vector<double>{3.5});
  const Flags none(5, 0);
  const std::vector<double> zeros(5, 0.0);
  EXPECT_EQ(brute_force_return_oracle(zeros, none, none, zeros, 0.99), zeros);
}

TEST(Returns, InvalidInputsRejected) {
  const Flags f(2, 0);
  const std::vector<double> r(2, 0.0);
  EXPECT_THROW(discounted_returns(r, f, f, r, 1.5), DomainError);
  EXPECT_THROW(discounted_returns(r, Flags(3, 0), f, r, 0.5), DimensionError);
}

TEST(Returns, RecursionMatchesOracleOnRandomSegments) {
  Rng rng(77);
  for (int trial = 0; trial < 400; ++trial) {
    for (std::size_t n : {1u, 4u, 8u, 32u}) {
      for (double gamma : {0.0, 0.5, 0.9, 0.99}) {
        std::vector<double> r(n), v(n);
        Flags term(n, 0), trunc(n, 0);
        for (std::size_t k = 0; k < n; ++k) {
          r[k] = rng.uniform(-2.0, 2.0);
          v[k] = rng.uniform(-10.0, 10.0);
          const double u = rng.uniform();
          if (u < 0.1) term[k] = 1;
          else if (u < 0.2) trunc[k] = 1;
        }
        const auto a = discounted_returns(r, term, trunc, v, gamma);
        const auto b = brute_force_return_oracle(r, term, trunc, v, gamma);
        for (std::size_t k = 0; k < n; ++k) ASSERT_NEAR(a[k], b[k], 1e-12);
      }
    }
  }
}

TEST(NStepReturns, RowLayoutAndNextValueReads) {
  auto b = random_batch(3, 6, {1, 2, 2}, 5, 0.25);
  b.validate();
  const auto nv = next_values_for(b, 6);
  const auto g = nstep_returns(b, nv, 0.9);
  for (Index w = 0; w < 3; ++w) {
    std::vector<double> r, v;
    Flags term, trunc;
    for (Index t = 0; t < 6; ++t) {
      const auto i = static_cast<std::size_t>(b.row(t, w));
      r.push_back(b.rewards[i]);
      v.push_back(b.needs_next_eval(b.row(t, w)) ? nv[i] : 0.0);
      term.push_back(b.terminated[i]);
      trunc.push_back(b.truncated[i]);
    }
    const auto want = brute_force_return_oracle(r, term, trunc, v, 0.9);
    for (Index t = 0; t < 6; ++t) {
      const double got = g[static_cast<std::size_t>(b.row(t, w))];
      ASSERT_TRUE(std::isfinite(got)) << "NaN next value read at w=" << w << " t=" << t;
      EXPECT_NEAR(got, want[static_cast<std::size_t>(t)], 1e-12);
    }
  }
}

TEST(NStepReturns, NeedsNextEvalRules) {
  auto b = random_batch(2, 3, {1, 1, 1}, 1, 0.0);
  b.truncated[static_cast<std::size_t>(b.row(0, 1))] = 1;
  b.terminated[static_cast<std::size_t>(b.row(2, 0))] = 1;
  EXPECT_TRUE(b.needs_next_eval(b.row(0, 1)));
  EXPECT_FALSE(b.needs_next_eval(b.row(0, 0)));
  EXPECT_FALSE(b.needs_next_eval(b.row(2, 0)));
  EXPECT_TRUE(b.needs_next_eval(b.row(2, 1)));
  b.truncated[static_cast<std::size_t>(b.row(2, 0))] = 1;
  EXPECT_THROW(b.validate(), DimensionError);
}

TEST(A2CLoss, UniformPolicyEntropy) {
  Graph<double> g(false);
  const auto t = a2c_loss(g.constant(T({5, 4})), g.constant(T({5})), std::vector<Index>{0, 1, 2, 3, 0},
                          std::vector<double>(5, 0.0));
  EXPECT_NEAR(t.mean_entropy, std::log(4.0), 1e-15);
  EXPECT_NEAR(t.entropy.item(), -std::log(4.0), 1e-15);
}

TEST(A2CLoss, PerfectValuesGiveZeroLosses) {
  Graph<double> g(false);
  const T v({3}, {0.5, -1.0, 2.0});
  const auto t = a2c_loss(g.constant(random_tensor({3, 4}, 1, -2, 2)), g.constant(v), std::vector<Index>{1, 2, 3},
                          std::vector<double>{0.5, -1.0, 2.0});
  EXPECT_EQ(t.value.item(), 0.0);
  EXPECT_EQ(t.policy.item(), 0.0);
}

TEST(A2CLoss, SingleTransitionHandValues) {
  using LD = long double;
  const std::array<LD, 4> z{1.0L, 2.0L, 0.5L, -1.0L};
  const LD v = 0.3L, ret = 1.0L;
  const Index action = 1;
  LD norm = 0.0L;
  for (LD x : z) norm += std::exp(x);
  std::array<LD, 4> logp{};
  LD ent = 0.0L;
  for (std::size_t i = 0; i < 4; ++i) {
    logp[i] = z[i] - std::log(norm);
    ent -= std::exp(logp[i]) * logp[i];
  }
  Graph<double> g(false);
  const auto t = a2c_loss(g.constant(T({1, 4}, {1.0, 2.0, 0.5, -1.0})), g.constant(T({1}, {0.3})),
                          std::vector<Index>{action}, std::vector<double>{1.0});
  EXPECT_NEAR(t.policy.item(), static_cast<double>(-logp[action] * (ret - v)), 1e-15);
  EXPECT_NEAR(t.value.item(), static_cast<double>((ret - v) * (ret - v)), 1e-15);
  EXPECT_NEAR(t.entropy.item(), static_cast<double>(-ent), 1e-15);
}

TEST(A2CLoss, AdvantageAndReturnCarryNoGradient) {
  ParameterSet<double> ps;
  ps.add("logits", random_tensor({2, 4}, 3, -1, 1));
  ps.add("v", T({2}, {0.2, -0.4}));
  const std::vector<Index> acts{2, 0};
  const std::vector<double> rets{1.0, 0.5};
  Graph<double> g;
  const auto lv = g.parameter(ps[0]);
  const auto vv = g.parameter(ps[1]);
  const auto terms = a2c_loss(lv, vv, acts, rets);
  const auto grads = g.backward(terms.policy);
  // Policy loss must not push on the value estimates.
  EXPECT_EQ(grads.at("v").data().cwiseAbs().maxCoeff(), 0.0);
  Graph<double> g2;
  const auto terms2 = a2c_loss(g2.parameter(ps[0]), g2.parameter(ps[1]), acts, rets);
  const auto grads2 = g2.backward(terms2.value);
  EXPECT_NEAR(grads2.at("v")[0], -(1.0 - 0.2), 1e-15);  // d/dV mean((G-V)^2) = -2(G-V)/N
  EXPECT_NEAR(grads2.at("v")[1], -(0.5 + 0.4), 1e-15);
  EXPECT_EQ(grads2.at("logits").data().cwiseAbs().maxCoeff(), 0.0);
}

TEST(A2CLoss, NonFiniteTermNamed) {
  Graph<double> g(false);
  try {
    a2c_loss(g.constant(T({1, 4})), g.constant(T({1})), std::vector<Index>{0},
             std::vector<double>{std::numeric_limits<double>::infinity()});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("loss"), std::string::npos) << e.what();
  }
  EXPECT_THROW(a2c_loss(g.constant(T({2, 4})), g.constant(T({2})), std::vector<Index>{0},
                        std::vector<double>{0.0}),
               DimensionError);
}

TEST(TDAELoss, ZeroDiscountIsReconstruction) {
  const T x = random_tensor({6, 10}, 4);
  const T psi_v = random_tensor({6, 10}, 5, -1, 2);
  const T next = random_tensor({6, 10}, 6, -3, 3);
  Graph<double> g(false);
  const double loss = tdae_loss(g.constant(psi_v), x, next, Flags(6, 0), 0.0).item();
  EXPECT_NEAR(loss, (x.data() - psi_v.data()).squaredNorm() / 60.0, 1e-12);
}

TEST(TDAELoss, ConstantObservationFixedPoint) {
  for (double gamma : {0.0, 0.5, 0.9, 0.99}) {
    const T x = T::constant({4, 7}, 0.6);
    Graph<double> g(false);
    EXPECT_NEAR(tdae_loss(g.constant(x), x, x, Flags(4, 0), gamma).item(), 0.0, 1e-30) << gamma;
  }
  // Unscaled fixed point for gamma 0.9 is 6, and the scaled head reports 0.6.
  const double unscaled = 0.6 / (1.0 - 0.9);
  EXPECT_NEAR(unscaled, 6.0, 1e-12);
  EXPECT_NEAR((1.0 - 0.9) * unscaled, 0.6, 1e-15);
}

TEST(TDAELoss, TerminatedRowsDropBootstrap) {
  const T x({2, 1}, {1.0, 1.0});
  const T next({2, 1}, {5.0, 5.0});
  Graph<double> g(false);
  const double loss = tdae_loss(g.constant(T({2, 1})), x, next, Flags{1, 0}, 0.5).item();
  // targets 0.5 and 0.5 + 2.5
  EXPECT_NEAR(loss, (0.25 + 9.0) / 2.0, 1e-15);
}

TEST(TDAELoss, InvalidInputsRejected) {
  Graph<double> g(false);
  const T x({2, 3});
  EXPECT_THROW(tdae_loss(g.constant(x), x, x, Flags(2, 0), 1.0), DomainError);
  EXPECT_THROW(tdae_loss(g.constant(x), T({2, 4}), x, Flags(2, 0), 0.5), DimensionError);
  EXPECT_THROW(tdae_loss(g.constant(x), x, x, Flags(3, 0), 0.5), DimensionError);
}

// A linear predictor psi = X W evaluated at S_t and S_{t+1}: the recorded
// gradient must be the semi-gradient -2/(N d) X_t^T e, with no term from the
// next-state path.
TEST(TDAELoss, SemiGradient) {
  const Index n = 5, in = 3, d = 4;
  const double gamma = 0.7;
  ParameterSet<double> ps;
  ps.add("w", random_tensor({in, d}, 10, -1, 1));
  const T feat = random_tensor({n, in}, 11);
  const T feat_next = random_tensor({n, in}, 12);
  const T x = random_tensor({n, d}, 13);
  const RowMatrixX<double> psi_next_m = feat_next.matrix() * ps[0].value.matrix();
  const T psi_next({n, d}, Eigen::Map<const VectorX<double>>(psi_next_m.data(), n * d));
  Graph<double> g;
  const auto loss = tdae_loss(matmul(g.constant(feat), g.parameter(ps[0])), x, psi_next, Flags(n, 0), gamma);
  const auto grads = g.backward(loss);
  const RowMatrixX<double> psi = feat.matrix() * ps[0].value.matrix();
  const RowMatrixX<double> e = (1 - gamma) * x.matrix() + gamma * psi_next_m - psi;
  const RowMatrixX<double> want = -2.0 / static_cast<double>(n * d) * feat.matrix().transpose() * e;
  for (Index i = 0; i < in * d; ++i) EXPECT_NEAR(grads.at("w")[i], want.data()[i], 1e-14);
  // Perturbing the parameters only along the next-state path changes the
  // target value but not how the gradient is formed.
  const RowMatrixX<double> full = want - 2.0 / static_cast<double>(n * d) * gamma * -feat_next.matrix().transpose() * e;
  EXPECT_GT((full - want).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(TotalLoss, ZeroWeightBitwiseEqualsA2C) {
  using tdae::testing::tiny_network;
  auto with_head = init_params<double>(3, tiny_network({3, 3, 3}, 1));
  auto without = init_params<double>(3, tiny_network({3, 3, 3}, 0));
  const T obs = random_tensor({4, 3, 3, 3}, 2);
  const std::vector<Index> acts{0, 1, 2, 3};
  const std::vector<double> rets{0.1, -0.2, 0.3, 0.5};
  const LossWeights weights;

  Graph<double> ga;
  AgentNet<double> na(ga, without);
  const auto ha = na.heads(na.core(ga.constant(obs), ga.constant(T({4, 5}))));
  const auto a2c_a = a2c_loss(ha.logits, ha.value, acts, rets);
  const auto la = total_loss<double>(a2c_a, {}, {}, weights);
  const auto grads_a = ga.backward(la.total_var);

  Graph<double> gb;
  AgentNet<double> nb(gb, with_head);
  const auto hb = nb.heads(nb.core(gb.constant(obs), gb.constant(T({4, 5}))));
  const auto a2c_b = a2c_loss(hb.logits, hb.value, acts, rets);
  const std::vector<Var<double>> terms{tdae_loss(hb.psi[0], obs.reshaped({4, 27}), T({4, 27}), Flags(4, 0), 0.9)};
  const std::vector<TDAESpec> specs{{0.9, 0.0}};
  const auto lb = total_loss<double>(a2c_b, terms, specs, weights);
  const auto grads_b = gb.backward(lb.total_var);

  EXPECT_EQ(la.total, lb.total);
  EXPECT_GT(lb.tdae_loss, 0.0);
  EXPECT_EQ(lb.tdae_weighted, 0.0);
  for (std::size_t i = 0; i < grads_a.names.size(); ++i) {
    EXPECT_EQ(grads_a.grads[i].data(), grads_b.at(grads_a.names[i]).data()) << grads_a.names[i];
  }
  EXPECT_EQ(grads_b.at("tdae0.out.w").data().cwiseAbs().maxCoeff(), 0.0);
}

TEST(TotalLoss, ReassemblesWeightedSum) {
  Graph<double> g(false);
  const auto a2c = a2c_loss(g.constant(random_tensor({3, 4}, 1, -1, 1)), g.constant(T({3}, {0.1, 0.2, 0.3})),
                            std::vector<Index>{0, 1, 2}, std::vector<double>{1, 0, -1});
  const T x = random_tensor({3, 5}, 2);
  const std::vector<Var<double>> terms{tdae_loss(g.constant(T({3, 5})), x, x, Flags(3, 0), 0.0),
                                       tdae_loss(g.constant(T({3, 5})), x, x, Flags(3, 0), 0.5)};
  const std::vector<TDAESpec> specs{{0.0, 10.0}, {0.5, 100.0}};
  const LossWeights w{0.5, 0.001};
  const auto l = total_loss<double>(a2c, terms, specs, w);
  const double want = l.policy_loss + 0.5 * l.value_loss + 0.001 * l.entropy_loss + 10.0 * terms[0].item() +
                      100.0 * terms[1].item();
  EXPECT_NEAR(l.total, want, 1e-12);
  EXPECT_NEAR(l.tdae_weighted, 10.0 * terms[0].item() + 100.0 * terms[1].item(), 1e-12);
  EXPECT_NEAR(l.tdae_loss, terms[0].item() + terms[1].item(), 1e-15);
  const std::vector<TDAESpec> bad{{1.0, 1.0}, {0.5, 1.0}};
  EXPECT_THROW(total_loss<double>(a2c, terms, bad, w), DomainError);
  EXPECT_THROW(total_loss<double>(a2c, terms, std::vector<TDAESpec>{{0.0, 1.0}}, w), DimensionError);
}

// Each loss only reaches the parameters it should: the TD-AE loss never
// touches the policy or value heads, and the A2C loss never touches the
// decoder. Rewards only enter through the returns.
TEST(TotalLoss, NoCrossContamination) {
  using tdae::testing::tiny_network;
  auto p = init_params<double>(8, tiny_network({3, 3, 3}, 1));
  const T obs = random_tensor({3, 3, 3, 3}, 4);
  const std::vector<Index> acts{0, 2, 1};
  const std::vector<double> rets{1.0, -1.0, 0.5};
  Graph<double> g1;
  AgentNet<double> n1(g1, p);
  const auto h1 = n1.heads(n1.core(g1.constant(obs), g1.constant(T({3, 5}))));
  const auto gt = g1.backward(tdae_loss(h1.psi[0], obs.reshaped({3, 27}), T({3, 27}), Flags(3, 0), 0.5));
  for (const char* name : {"policy.w", "policy.b", "value.w", "value.b"}) {
    EXPECT_EQ(gt.at(name).data().cwiseAbs().maxCoeff(), 0.0) << name;
  }
  Graph<double> g2;
  AgentNet<double> n2(g2, p);
  const auto h2 = n2.heads(n2.core(g2.constant(obs), g2.constant(T({3, 5}))));
  const auto a2c = a2c_loss(h2.logits, h2.value, acts, rets);
  const auto ga = g2.backward(total_loss<double>(a2c, {}, {}, LossWeights{}).total_var);
  for (const char* name : {"tdae0.fc0.w", "tdae0.fc1.w", "tdae0.out.w", "tdae0.out.b"}) {
    EXPECT_EQ(ga.at(name).data().cwiseAbs().maxCoeff(), 0.0) << name;
  }
}

TEST(TotalLoss, GradientCheckThroughEveryHead) {
  using tdae::testing::tiny_network;
  auto p = init_params<double>(9, tiny_network({3, 3, 3}, 1));
  const auto batch = random_batch(2, 3, {3, 3, 3}, 12, 0.3, 5);
  const std::vector<double> rets{0.3, -0.1, 0.7, 0.2, -0.5, 1.0};
  const T psi_next = random_tensor({6, 27}, 14);
  // The advantage is a stop-gradient quantity, so it is frozen at the
  // unperturbed parameters for the finite differences.
  std::vector<double> baseline;
  {
    Graph<double> g(false);
    AgentNet<double> net(g, std::as_const(p));
    const auto v = net.heads(net.core(g.constant(batch.observations), g.constant(T({6, 5}))), false).value.value();
    baseline.assign(v.data().begin(), v.data().end());
  }
  const auto r = check_gradients(
      [&](Graph<double>& g) {
        AgentNet<double> net(g, p);
        const auto out = net.heads(net.core(g.constant(batch.observations), g.constant(T({6, 5}))));
        const auto a2c = a2c_loss(out.logits, out.value, batch.actions, rets, baseline);
        const std::vector<Var<double>> terms{
            tdae_loss(out.psi[0], batch.observations.reshaped({6, 27}), psi_next, batch.terminated, 0.9)};
        const std::vector<TDAESpec> specs{{0.9, 3.0}};
        return total_loss<double>(a2c, terms, specs, LossWeights{}).total_var;
      },
      p.params);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "] analytic " << r.analytic
                                   << " numeric " << r.numeric;
}
