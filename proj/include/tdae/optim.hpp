// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "tdae/graph.hpp"

namespace tdae {

struct RmsPropConfig {
  double learning_rate = 7e-4;
  double decay = 0.99;
  double epsilon = 1e-5;
  double clip_norm = 0.5;
};

struct StepStats {
  double grad_norm = 0.0;     // before clipping
  double clip_scale = 1.0;    // factor applied to every gradient
};

/// RMSProp with global gradient-norm clipping:
///   g    <- g * min(1, clip / ||g||)
///   ms   <- decay * ms + (1 - decay) * g^2
///   p    <- p - lr * g / (sqrt(ms) + eps)
template <typename Scalar>
class RmsProp {
 public:
  RmsProp() = default;
  RmsProp(const ParameterSet<Scalar>& params, RmsPropConfig config);

  /// Gradients are matched to parameters by name; a parameter without a
  /// gradient is treated as having a zero gradient. A non-finite gradient
  /// throws NumericError naming the parameter before anything is modified.
  StepStats step(ParameterSet<Scalar>& params, const GradientMap<Scalar>& grads);

  const RmsPropConfig& config() const { return config_; }
  std::uint64_t step_count() const { return step_count_; }
  const std::vector<Tensor<Scalar>>& accumulators() const { return square_avg_; }
  std::vector<Tensor<Scalar>>& accumulators() { return square_avg_; }

 private:
  RmsPropConfig config_;
  std::vector<Tensor<Scalar>> square_avg_;
  std::uint64_t step_count_ = 0;
};

}  // namespace tdae
