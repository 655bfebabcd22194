// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tdae/ops.hpp"

namespace tdae {

enum class TrunkKind {
  kConv,  // conv stack -> flatten -> dense, ReLU after every layer
  kMlp,   // flatten -> dense + ReLU (one-hot diagnostic inputs)
  kNone,  // flatten only; with use_gru = false the heads are linear in the input
};

struct ConvLayerSpec {
  Index out_channels = 0;
  Index kernel = 0;
  Index stride = 1;
  bool operator==(const ConvLayerSpec&) const = default;
};

struct NetworkConfig {
  std::array<Index, 3> input_shape{3, 9, 9};  // C, H, W
  TrunkKind trunk = TrunkKind::kConv;
  std::vector<ConvLayerSpec> conv_layers{{8, 3, 1}, {16, 3, 2}, {16, 3, 1}};
  Index fc_size = 128;
  bool use_gru = true;
  Index hidden_size = 128;
  Index num_actions = 4;
  std::vector<Index> decoder_sizes{256, 512};
  Index aux_heads = 0;  // number of TD-AE decoders
  double policy_init_scale = 0.01;

  Index obs_size() const { return input_shape[0] * input_shape[1] * input_shape[2]; }
  /// Spatial output shape (C, H, W) of every conv layer.
  std::vector<std::array<Index, 3>> conv_output_shapes() const;
  Index feature_size() const;
  Index core_size() const { return use_gru ? hidden_size : feature_size(); }
  /// Throws ConfigError on inconsistent shapes, including empty conv output.
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

template <typename Scalar>
struct AgentParams {
  NetworkConfig config;
  ParameterSet<Scalar> params;

  template <typename Other>
  AgentParams<Other> cast() const {
    AgentParams<Other> out{config, {}};
    for (const auto& p : params) out.params.add(p.name, p.value.template cast<Other>());
    return out;
  }
};

/// Deterministic initialisation. Each tensor draws from its own stream
/// derived from (seed, name), so adding or removing a head leaves every
/// other tensor bit-identical. Weights are uniform with fan-in scaling,
/// biases zero, and the policy layer is scaled down so the initial policy
/// is close to uniform.
template <typename Scalar>
AgentParams<Scalar> init_params(std::uint64_t seed, const NetworkConfig& config);

template <typename Scalar>
struct HeadsOutput {
  Var<Scalar> logits;            // [N x A]
  Var<Scalar> value;             // [N]
  std::vector<Var<Scalar>> psi;  // per TD-AE head, [N x d], (1 - gamma)-scaled
};

/// Binds a parameter set to a graph and evaluates the agent network on
/// batches. All tensors carry a leading batch dimension N.
template <typename Scalar>
class AgentNet {
 public:
  /// Parameters become gradient leaves when the graph records.
  AgentNet(Graph<Scalar>& graph, AgentParams<Scalar>& params);
  /// Read-only binding; requires a non-recording graph.
  AgentNet(Graph<Scalar>& graph, const AgentParams<Scalar>& params);

  /// [N x C x H x W] -> [N x feature_size]
  Var<Scalar> trunk(Var<Scalar> obs) const;
  /// x [N x fc], h [N x hidden] -> h' [N x hidden]
  Var<Scalar> gru_step(Var<Scalar> x, Var<Scalar> h) const;
  /// trunk followed by gru_step; returns features directly without a GRU.
  Var<Scalar> core(Var<Scalar> obs, Var<Scalar> h) const;
  HeadsOutput<Scalar> heads(Var<Scalar> core, bool with_aux = true) const;

  const NetworkConfig& config() const { return *config_; }
  Graph<Scalar>& graph() const { return *graph_; }

 private:
  struct Dense {
    Var<Scalar> w, b;
  };
  void bind(const std::vector<Var<Scalar>>& leaves, const ParameterSet<Scalar>& params);

  Graph<Scalar>* graph_;
  const NetworkConfig* config_;
  std::vector<Dense> conv_;
  Dense fc_;
  Var<Scalar> wz_, uz_, bz_, wr_, ur_, br_, wh_, uh_, bh_;
  Dense policy_, value_;
  std::vector<std::vector<Dense>> decoders_;
};

}  // namespace tdae
