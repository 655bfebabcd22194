// SPDX-License-Identifier: Apache-2.0
#include "tdae/optim.hpp"

#include <cmath>

namespace tdae {

template <typename Scalar>
RmsProp<Scalar>::RmsProp(const ParameterSet<Scalar>& params, RmsPropConfig config) : config_(config) {
  if (!(config.learning_rate > 0) || !(config.decay >= 0 && config.decay < 1) || !(config.epsilon > 0) ||
      !(config.clip_norm > 0)) {
    throw ConfigError("invalid RMSProp hyperparameters");
  }
  for (const auto& p : params) square_avg_.push_back(Tensor<Scalar>::zeros(p.value.shape()));
}

template <typename Scalar>
StepStats RmsProp<Scalar>::step(ParameterSet<Scalar>& params, const GradientMap<Scalar>& grads) {
  if (static_cast<Index>(square_avg_.size()) != params.size()) {
    throw DimensionError("optimizer state has " + std::to_string(square_avg_.size()) + " accumulators for " +
                         std::to_string(params.size()) + " parameters");
  }
  std::vector<const Tensor<Scalar>*> matched(square_avg_.size(), nullptr);
  double norm2 = 0.0;
  for (Index i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    const auto* g = grads.find(p.name);
    if (p.value.shape() != square_avg_[static_cast<std::size_t>(i)].shape()) {
      throw DimensionError("optimizer accumulator shape mismatch for '" + p.name + "'");
    }
    if (!g) continue;
    if (g->shape() != p.value.shape()) {
      throw DimensionError("gradient of '" + p.name + "' has shape " + shape_string(g->shape()) + ", parameter " +
                           shape_string(p.value.shape()));
    }
    if (!g->all_finite()) throw NumericError("non-finite gradient for parameter '" + p.name + "'");
    norm2 += g->data().template cast<double>().squaredNorm();
    matched[static_cast<std::size_t>(i)] = g;
  }

  StepStats stats;
  stats.grad_norm = std::sqrt(norm2);
  if (stats.grad_norm > config_.clip_norm) stats.clip_scale = config_.clip_norm / stats.grad_norm;

  const auto clip = static_cast<Scalar>(stats.clip_scale);
  const auto decay = static_cast<Scalar>(config_.decay);
  const auto lr = static_cast<Scalar>(config_.learning_rate);
  const auto eps = static_cast<Scalar>(config_.epsilon);
  for (Index i = 0; i < params.size(); ++i) {
    auto& ms = square_avg_[static_cast<std::size_t>(i)].data();
    const auto* g = matched[static_cast<std::size_t>(i)];
    if (!g) {
      ms *= decay;
      continue;
    }
    const VectorX<Scalar> gc = g->data() * clip;
    ms = decay * ms + (Scalar(1) - decay) * gc.cwiseAbs2();
    params[i].value.data().array() -= lr * gc.array() / (ms.array().sqrt() + eps);
  }
  ++step_count_;
  return stats;
}

template class RmsProp<double>;
template class RmsProp<float>;

}  // namespace tdae
