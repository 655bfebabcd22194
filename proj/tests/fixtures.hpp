// SPDX-License-Identifier: Apache-2.0
// Shared builders for synthetic batches and small networks.
#pragma once

#include <cstdint>
#include <vector>

#include "tdae/network.hpp"
#include "tdae/returns.hpp"
#include "tdae/rng.hpp"

namespace tdae::testing {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Random segment with observations in [0, 1] and random episode cuts.
/// `cut_prob` is the chance of a cut after any transition; half of the cuts
/// are truncations.
inline SegmentBatch<double> random_batch(Index workers, Index length, std::array<Index, 3> obs_shape,
                                         std::uint64_t seed, double cut_prob = 0.2, Index hidden = 0) {
  Rng rng(seed);
  SegmentBatch<double> b;
  b.workers = workers;
  b.length = length;
  b.obs_shape = obs_shape;
  const Index n = workers * length;
  const auto un = static_cast<std::size_t>(n);
  b.observations = random_tensor({n, obs_shape[0], obs_shape[1], obs_shape[2]}, seed + 1);
  b.final_obs = Tensor<double>({n, obs_shape[0], obs_shape[1], obs_shape[2]});
  b.bootstrap_obs = random_tensor({workers, obs_shape[0], obs_shape[1], obs_shape[2]}, seed + 2);
  b.actions.resize(un);
  b.rewards.resize(un);
  b.terminated.assign(un, 0);
  b.truncated.assign(un, 0);
  b.episode_start.assign(un, 0);
  const Index d = obs_shape[0] * obs_shape[1] * obs_shape[2];
  for (Index r = 0; r < n; ++r) {
    const auto i = static_cast<std::size_t>(r);
    b.actions[i] = static_cast<Index>(rng.below(4));
    b.rewards[i] = rng.uniform(-1.0, 1.0);
    if (rng.uniform() < cut_prob) {
      if (rng.uniform() < 0.5) {
        b.terminated[i] = 1;
      } else {
        b.truncated[i] = 1;
        for (Index k = 0; k < d; ++k) b.final_obs[r * d + k] = rng.uniform();
      }
    }
    if (r >= workers && b.done(r - workers)) b.episode_start[i] = 1;
  }
  if (hidden > 0) {
    b.initial_hidden = random_tensor({workers, hidden}, seed + 3, -0.5, 0.5);
  } else {
    b.initial_hidden = Tensor<double>({workers, 0});
  }
  return b;
}

inline NetworkConfig tiny_network(std::array<Index, 3> input_shape, Index aux_heads) {
  NetworkConfig c;
  c.input_shape = input_shape;
  c.trunk = TrunkKind::kConv;
  c.conv_layers = {{2, 2, 1}};
  c.fc_size = 6;
  c.use_gru = true;
  c.hidden_size = 5;
  c.decoder_sizes = {4, 5};
  c.aux_heads = aux_heads;
  return c;
}

}  // namespace tdae::testing
