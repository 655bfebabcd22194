// SPDX-License-Identifier: Apache-2.0
#include "tdae/rollout.hpp"

#include <algorithm>
#include <exception>
#include <string>
#include <thread>
#include <utility>

namespace tdae {

void RolloutConfig::validate() const {
  if (workers < 1) throw ConfigError("rollout needs at least one worker");
  if (segment_length < 1) throw ConfigError("segment length must be at least 1");
}

template <typename Scalar>
WorkerSlot<Scalar>::WorkerSlot(Index index_, std::uint64_t run_seed_, const Scenario& scenario, Index hidden_size)
    : index(index_),
      run_seed(run_seed_),
      env(scenario),
      hidden(Shape{hidden_size}),
      action_rng(stream_seed({run_seed_, tag(StreamTag::kAction), static_cast<std::uint64_t>(index_)})) {
  obs = env.reset(stream_seed({run_seed, tag(StreamTag::kEpisode), static_cast<std::uint64_t>(index), 0}));
}

template <typename Scalar>
void WorkerSlot<Scalar>::begin_episode() {
  ++episode_index;
  obs = env.reset(stream_seed({run_seed, tag(StreamTag::kEpisode), static_cast<std::uint64_t>(index), episode_index}));
  hidden.data().setZero();
  episode_return = 0.0;
  episode_length = 0;
  episode_start = true;
}

template <typename Scalar>
std::vector<WorkerSlot<Scalar>> make_workers(const Scenario& scenario, Index count, std::uint64_t run_seed,
                                             const NetworkConfig& net) {
  if (count < 1) throw ConfigError("rollout needs at least one worker");
  const auto shape = scenario.observation_shape();
  if (shape != net.input_shape) {
    throw ConfigError("scenario observation shape " + shape_string({shape[0], shape[1], shape[2]}) +
                      " does not match network input " +
                      shape_string({net.input_shape[0], net.input_shape[1], net.input_shape[2]}));
  }
  std::vector<WorkerSlot<Scalar>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index w = 0; w < count; ++w) out.emplace_back(w, run_seed, scenario, net.use_gru ? net.hidden_size : 0);
  return out;
}

template <typename Scalar>
PolicyOutput<Scalar> policy_forward(const AgentParams<Scalar>& params, const Tensor<Scalar>& obs,
                                    const Tensor<Scalar>& hidden, bool with_aux) {
  Graph<Scalar> g(false);
  const AgentNet<Scalar> net(g, params);
  const Var<Scalar> core = net.core(g.constant_ref(obs), g.constant_ref(hidden));
  const HeadsOutput<Scalar> h = net.heads(core, with_aux);
  PolicyOutput<Scalar> out;
  out.probs = softmax(h.logits).value().matrix().template cast<double>();
  const auto& v = h.value.value();
  out.values.resize(static_cast<std::size_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) out.values[static_cast<std::size_t>(i)] = static_cast<double>(v[i]);
  out.hidden = params.config.use_gru ? core.value() : Tensor<Scalar>(Shape{obs.dim(0), 0});
  for (const auto& p : h.psi) out.psi.push_back(p.value());
  return out;
}

Index select_action(const Eigen::Ref<const Eigen::RowVectorXd>& probs, ActionSelection mode, Rng& rng) {
  if (mode == ActionSelection::kArgmax) {
    Index best = 0;
    probs.maxCoeff(&best);
    return best;
  }
  const double u = rng.uniform();
  double acc = 0.0;
  Index last = 0;
  for (Index a = 0; a < probs.size(); ++a) {
    if (probs[a] <= 0.0) continue;
    acc += probs[a];
    last = a;
    if (u < acc) return a;
  }
  return last;
}

namespace {

/// Runs fn(w) for every worker, on threads when requested. The first
/// failure by worker index is rethrown.
template <typename Fn>
void for_each_worker(Index count, bool parallel, Fn&& fn) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  auto guarded = [&](Index w) {
    try {
      fn(w);
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  const Index threads =
      parallel ? std::min<Index>(count, std::max<Index>(1, static_cast<Index>(std::thread::hardware_concurrency())))
               : 1;
  if (threads <= 1) {
    for (Index w = 0; w < count; ++w) guarded(w);
  } else {
    std::vector<std::thread> pool;
    for (Index k = 0; k < threads; ++k) {
      pool.emplace_back([&, k] {
        for (Index w = k; w < count; w += threads) guarded(w);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

template <typename Scalar>
Segment<Scalar> collect_segment(const AgentParams<Scalar>& params, std::vector<WorkerSlot<Scalar>>& workers,
                                const RolloutConfig& config) {
  config.validate();
  const Index W = static_cast<Index>(workers.size());
  if (W != config.workers) {
    throw ConfigError("rollout configured for " + std::to_string(config.workers) + " workers but " +
                      std::to_string(W) + " were given");
  }
  const Index n = config.segment_length;
  const auto& net = params.config;
  const Index d = net.obs_size();
  const Index hs = net.use_gru ? net.hidden_size : 0;
  const auto& is = net.input_shape;
  const auto N = static_cast<std::size_t>(W * n);

  Segment<Scalar> seg;
  auto& b = seg.batch;
  b.workers = W;
  b.length = n;
  b.obs_shape = is;
  b.observations = Tensor<Scalar>({W * n, is[0], is[1], is[2]});
  b.final_obs = Tensor<Scalar>({W * n, is[0], is[1], is[2]});
  b.bootstrap_obs = Tensor<Scalar>({W, is[0], is[1], is[2]});
  b.initial_hidden = Tensor<Scalar>({W, hs});
  b.actions.assign(N, 0);
  b.rewards.assign(N, 0.0);
  b.terminated.assign(N, 0);
  b.truncated.assign(N, 0);
  b.episode_start.assign(N, 0);
  for (Index w = 0; w < W; ++w) {
    b.initial_hidden.data().segment(w * hs, hs) = workers[static_cast<std::size_t>(w)].hidden.data();
  }

  Tensor<Scalar> obs({W, is[0], is[1], is[2]});
  Tensor<Scalar> hidden({W, hs});
  std::vector<StepResult> results(static_cast<std::size_t>(W));
  for (Index t = 0; t < n; ++t) {
    for (Index w = 0; w < W; ++w) {
      const auto& slot = workers[static_cast<std::size_t>(w)];
      if (slot.obs.size() != d) throw DimensionError("worker observation does not match the network input");
      obs.data().segment(w * d, d) = slot.obs.data().template cast<Scalar>();
      hidden.data().segment(w * hs, hs) = slot.hidden.data();
    }
    b.observations.data().segment(t * W * d, W * d) = obs.data();
    const PolicyOutput<Scalar> out = policy_forward(params, obs, hidden, false);

    for (Index w = 0; w < W; ++w) {
      auto& slot = workers[static_cast<std::size_t>(w)];
      const auto r = static_cast<std::size_t>(b.row(t, w));
      b.actions[r] = select_action(out.probs.row(w), config.action_selection, slot.action_rng);
      b.episode_start[r] = slot.episode_start ? 1 : 0;
      slot.episode_start = false;
      slot.hidden.data() = out.hidden.data().segment(w * hs, hs);
    }

    for_each_worker(W, config.parallel_envs, [&](Index w) {
      try {
        results[static_cast<std::size_t>(w)] =
            workers[static_cast<std::size_t>(w)].env.step(static_cast<int>(b.actions[static_cast<std::size_t>(b.row(t, w))]));
      } catch (const UsageError& e) {
        throw UsageError("worker " + std::to_string(w) + ": " + e.what());
      }
    });

    for (Index w = 0; w < W; ++w) {
      auto& slot = workers[static_cast<std::size_t>(w)];
      auto& res = results[static_cast<std::size_t>(w)];
      const Index row = b.row(t, w);
      const auto r = static_cast<std::size_t>(row);
      b.rewards[r] = res.reward;
      b.terminated[r] = res.terminated ? 1 : 0;
      b.truncated[r] = res.truncated ? 1 : 0;
      slot.episode_return += res.reward;
      ++slot.episode_length;
      if (res.truncated) b.final_obs.data().segment(row * d, d) = res.obs.data().template cast<Scalar>();
      if (res.terminated || res.truncated) {
        seg.completed.push_back({w, slot.episode_index, slot.episode_return, slot.episode_length, res.truncated});
        slot.begin_episode();
      } else {
        slot.obs = std::move(res.obs);
      }
    }
  }
  for (Index w = 0; w < W; ++w) {
    b.bootstrap_obs.data().segment(w * d, d) = workers[static_cast<std::size_t>(w)].obs.data().template cast<Scalar>();
  }
  return seg;
}

template <typename Scalar>
SegmentLoss<Scalar> segment_loss(Graph<Scalar>& g, AgentParams<Scalar>& params, const SegmentBatch<Scalar>& batch,
                                 const TrainSettings& settings, const SegmentTargets<Scalar>* frozen) {
  batch.validate();
  const auto& cfg = params.config;
  if (static_cast<Index>(settings.aux.size()) != cfg.aux_heads) {
    throw ConfigError("network has " + std::to_string(cfg.aux_heads) + " TD-AE heads but " +
                      std::to_string(settings.aux.size()) + " auxiliary specs were given");
  }
  if (batch.obs_shape != cfg.input_shape) throw DimensionError("batch observations do not match the network input");
  const Index W = batch.workers, n = batch.length, N = batch.transitions();
  const Index d = cfg.obs_size();
  const Index hs = cfg.use_gru ? cfg.hidden_size : 0;
  const auto& is = cfg.input_shape;
  const bool with_aux = cfg.aux_heads > 0;

  const AgentNet<Scalar> net(g, params);
  const Var<Scalar> features = net.trunk(g.constant_ref(batch.observations));
  Var<Scalar> core = features;
  if (cfg.use_gru) {
    if (batch.initial_hidden.size() != W * hs) throw DimensionError("initial hidden state has the wrong size");
    Var<Scalar> h = g.constant_ref(batch.initial_hidden);
    std::vector<Var<Scalar>> states;
    states.reserve(static_cast<std::size_t>(n));
    for (Index t = 0; t < n; ++t) {
      bool any_start = false;
      Tensor<Scalar> mask = Tensor<Scalar>::constant({W, hs}, Scalar(1));
      for (Index w = 0; w < W; ++w) {
        if (batch.episode_start[static_cast<std::size_t>(batch.row(t, w))]) {
          mask.data().segment(w * hs, hs).setZero();
          any_start = true;
        }
      }
      if (any_start) h = mul(h, g.constant(std::move(mask)));
      h = net.gru_step(rows(features, t * W, W), h);
      states.push_back(h);
    }
    core = concat_rows(states);
  }
  const HeadsOutput<Scalar> heads = net.heads(core, with_aux);

  SegmentLoss<Scalar> out;
  SegmentTargets<Scalar>& tg = out.targets;
  if (frozen) {
    tg = *frozen;
    if (static_cast<Index>(tg.returns.size()) != N || static_cast<Index>(tg.baseline.size()) != N ||
        static_cast<Index>(tg.psi_next.size()) != cfg.aux_heads) {
      throw DimensionError("frozen targets do not match the batch");
    }
  } else {
    // Bootstrap states: the pre-reset successor at truncations, the live
    // observation at the segment end. Evaluated without gradient from the
    // hidden state reached after the transition.
    std::vector<Index> eval_rows;
    for (Index r = 0; r < N; ++r) {
      if (batch.needs_next_eval(r)) eval_rows.push_back(r);
    }
    const auto E = static_cast<Index>(eval_rows.size());
    std::vector<double> next_values(static_cast<std::size_t>(N), 0.0);
    PolicyOutput<Scalar> next;
    if (E > 0) {
      Tensor<Scalar> next_obs({E, is[0], is[1], is[2]});
      Tensor<Scalar> next_hidden({E, hs});
      const auto& core_value = core.value();
      for (Index j = 0; j < E; ++j) {
        const Index r = eval_rows[static_cast<std::size_t>(j)];
        const Index w = r % W;
        next_obs.data().segment(j * d, d) = batch.truncated[static_cast<std::size_t>(r)]
                                                ? batch.final_obs.data().segment(r * d, d)
                                                : batch.bootstrap_obs.data().segment(w * d, d);
        if (hs > 0) next_hidden.data().segment(j * hs, hs) = core_value.data().segment(r * hs, hs);
      }
      next = policy_forward(std::as_const(params), next_obs, next_hidden, with_aux);
      for (Index j = 0; j < E; ++j) {
        next_values[static_cast<std::size_t>(eval_rows[static_cast<std::size_t>(j)])] =
            next.values[static_cast<std::size_t>(j)];
      }
    }
    tg.returns = nstep_returns(batch, next_values, settings.gamma);
    const auto& v = heads.value.value();
    tg.baseline.resize(static_cast<std::size_t>(N));
    for (Index r = 0; r < N; ++r) tg.baseline[static_cast<std::size_t>(r)] = static_cast<double>(v[r]);

    for (Index k = 0; k < cfg.aux_heads; ++k) {
      const auto& psi = heads.psi[static_cast<std::size_t>(k)].value();
      Tensor<Scalar> psi_next({N, d});
      Index j = 0;
      for (Index r = 0; r < N; ++r) {
        if (batch.terminated[static_cast<std::size_t>(r)]) continue;
        if (batch.needs_next_eval(r)) {
          while (eval_rows[static_cast<std::size_t>(j)] != r) ++j;
          psi_next.data().segment(r * d, d) = next.psi[static_cast<std::size_t>(k)].data().segment(j * d, d);
        } else {
          psi_next.data().segment(r * d, d) = psi.data().segment((r + W) * d, d);
        }
      }
      tg.psi_next.push_back(std::move(psi_next));
    }
  }

  const A2CTerms<Scalar> a2c = a2c_loss(heads.logits, heads.value, batch.actions, tg.returns, tg.baseline);
  std::vector<Var<Scalar>> tdae_terms;
  for (Index k = 0; k < cfg.aux_heads; ++k) {
    tdae_terms.push_back(tdae_loss(heads.psi[static_cast<std::size_t>(k)], batch.observations,
                                   tg.psi_next[static_cast<std::size_t>(k)],
                                   std::span<const std::uint8_t>(batch.terminated),
                                   settings.aux[static_cast<std::size_t>(k)].gamma_aux));
  }
  out.loss = total_loss<Scalar>(a2c, tdae_terms, std::span<const TDAESpec>(settings.aux), settings.weights);
  return out;
}

template <typename Scalar>
UpdateStats train_update(AgentParams<Scalar>& params, RmsProp<Scalar>& optim, const SegmentBatch<Scalar>& batch,
                         const TrainSettings& settings, std::uint64_t update_index) {
  try {
    Graph<Scalar> g(true);
    const LossBreakdown<Scalar> loss = segment_loss(g, params, batch, settings).loss;
    const GradientMap<Scalar> grads = g.backward(loss.total_var);
    UpdateStats out;
    out.policy_loss = loss.policy_loss;
    out.value_loss = loss.value_loss;
    out.entropy_loss = loss.entropy_loss;
    out.mean_entropy = loss.mean_entropy;
    out.tdae_loss = loss.tdae_loss;
    out.tdae_weighted = loss.tdae_weighted;
    out.total = loss.total;
    out.step = optim.step(params.params, grads);
    return out;
  } catch (const NumericError& e) {
    throw NumericError("update " + std::to_string(update_index) + ": " + e.what());
  }
}

template struct WorkerSlot<double>;
template struct WorkerSlot<float>;

#define TDAE_INSTANTIATE_ROLLOUT(S)                                                                              \
  template std::vector<WorkerSlot<S>> make_workers<S>(const Scenario&, Index, std::uint64_t,                    \
                                                      const NetworkConfig&);                                     \
  template PolicyOutput<S> policy_forward<S>(const AgentParams<S>&, const Tensor<S>&, const Tensor<S>&, bool);  \
  template Segment<S> collect_segment<S>(const AgentParams<S>&, std::vector<WorkerSlot<S>>&,                    \
                                         const RolloutConfig&);                                                  \
  template SegmentLoss<S> segment_loss<S>(Graph<S>&, AgentParams<S>&, const SegmentBatch<S>&,                 \
                                          const TrainSettings&, const SegmentTargets<S>*);                       \
  template UpdateStats train_update<S>(AgentParams<S>&, RmsProp<S>&, const SegmentBatch<S>&,                    \
                                       const TrainSettings&, std::uint64_t);

TDAE_INSTANTIATE_ROLLOUT(double)
TDAE_INSTANTIATE_ROLLOUT(float)

}  // namespace tdae
