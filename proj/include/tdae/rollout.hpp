// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "tdae/env.hpp"
#include "tdae/network.hpp"
#include "tdae/optim.hpp"
#include "tdae/returns.hpp"

namespace tdae {

enum class ActionSelection { kSample, kArgmax };

struct RolloutConfig {
  Index workers = 16;
  Index segment_length = 128;
  ActionSelection action_selection = ActionSelection::kSample;
  bool parallel_envs = false;  // step environments on worker threads

  Index transitions_per_update() const { return workers * segment_length; }
  void validate() const;
  bool operator==(const RolloutConfig&) const = default;
};

/// One environment with the agent state that travels with it.
template <typename Scalar>
struct WorkerSlot {
  Index index = 0;
  std::uint64_t run_seed = 0;
  Env env;
  Tensor<double> obs;
  Tensor<Scalar> hidden;  // [hidden], zero at every episode start
  double episode_return = 0.0;
  Index episode_length = 0;
  std::uint64_t episode_index = 0;
  bool episode_start = true;
  Rng action_rng;

  WorkerSlot(Index index, std::uint64_t run_seed, const Scenario& scenario, Index hidden_size);
  /// Starts the next episode: fresh layout, zero hidden state.
  void begin_episode();
};

template <typename Scalar>
std::vector<WorkerSlot<Scalar>> make_workers(const Scenario& scenario, Index count, std::uint64_t run_seed,
                                             const NetworkConfig& net);

struct EpisodeSummary {
  Index worker = 0;
  std::uint64_t episode = 0;
  double episode_return = 0.0;
  Index length = 0;
  bool truncated = false;
};

template <typename Scalar>
struct Segment {
  SegmentBatch<Scalar> batch;
  std::vector<EpisodeSummary> completed;  // in (step, worker) order
};

/// Batched inference without recording.
template <typename Scalar>
struct PolicyOutput {
  RowMatrixX<double> probs;  // [N x A]
  std::vector<double> values;
  Tensor<Scalar> hidden;     // [N x hidden] after this step
  std::vector<Tensor<Scalar>> psi;  // per TD-AE head, [N x d]
};

/// obs [N x C x H x W], hidden [N x hidden] (ignored without a GRU).
template <typename Scalar>
PolicyOutput<Scalar> policy_forward(const AgentParams<Scalar>& params, const Tensor<Scalar>& obs,
                                    const Tensor<Scalar>& hidden, bool with_aux);

/// Draws from a probability row, or takes the first maximum for argmax.
Index select_action(const Eigen::Ref<const Eigen::RowVectorXd>& probs, ActionSelection mode, Rng& rng);

/// Advances every worker n lock-steps and returns the filled batch.
template <typename Scalar>
Segment<Scalar> collect_segment(const AgentParams<Scalar>& params, std::vector<WorkerSlot<Scalar>>& workers,
                                const RolloutConfig& config);

struct TrainSettings {
  double gamma = 0.99;
  LossWeights weights;
  std::vector<TDAESpec> aux;  // one per TD-AE head of the network
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy_loss = 0.0;
  double mean_entropy = 0.0;
  double tdae_loss = 0.0;
  double tdae_weighted = 0.0;
  double total = 0.0;
  StepStats step;
};

/// Stop-gradient quantities of a batch loss.
template <typename Scalar>
struct SegmentTargets {
  std::vector<double> returns;            // n-step returns, row layout
  std::vector<double> baseline;           // V(S_t) of the same forward pass
  std::vector<Tensor<Scalar>> psi_next;   // per head, [N x d]
};

template <typename Scalar>
struct SegmentLoss {
  LossBreakdown<Scalar> loss;
  SegmentTargets<Scalar> targets;
};

/// Records the training loss of a batch on `graph`. The GRU is re-run over
/// every row from the stored initial hidden state, zeroed where an episode
/// started. Targets come from the current parameters unless `frozen`
/// supplies them.
template <typename Scalar>
SegmentLoss<Scalar> segment_loss(Graph<Scalar>& graph, AgentParams<Scalar>& params, const SegmentBatch<Scalar>& batch,
                                 const TrainSettings& settings, const SegmentTargets<Scalar>* frozen = nullptr);

/// One A2C update on a batch via segment_loss. Numerical failures are rethrown as NumericError tagged with `update_index`.
template <typename Scalar>
UpdateStats train_update(AgentParams<Scalar>& params, RmsProp<Scalar>& optim, const SegmentBatch<Scalar>& batch,
                         const TrainSettings& settings, std::uint64_t update_index);

}  // namespace tdae
