// SPDX-License-Identifier: Apache-2.0
#include "tdae/network.hpp"

#include <cmath>
#include <string>

#include "tdae/rng.hpp"

namespace tdae {

std::vector<std::array<Index, 3>> NetworkConfig::conv_output_shapes() const {
  std::vector<std::array<Index, 3>> out;
  std::array<Index, 3> cur = input_shape;
  for (std::size_t i = 0; i < conv_layers.size(); ++i) {
    const auto& l = conv_layers[i];
    if (l.out_channels <= 0 || l.kernel <= 0 || l.stride <= 0) {
      throw ConfigError("conv layer " + std::to_string(i) + " has non-positive parameters");
    }
    if (l.kernel > cur[1] || l.kernel > cur[2]) {
      throw ConfigError("conv layer " + std::to_string(i) + ": kernel " + std::to_string(l.kernel) +
                        " exceeds its " + std::to_string(cur[1]) + "x" + std::to_string(cur[2]) +
                        " input (spatially empty output)");
    }
    cur = {l.out_channels, (cur[1] - l.kernel) / l.stride + 1, (cur[2] - l.kernel) / l.stride + 1};
    out.push_back(cur);
  }
  return out;
}

Index NetworkConfig::feature_size() const {
  return trunk == TrunkKind::kNone ? obs_size() : fc_size;
}

void NetworkConfig::validate() const {
  for (Index d : input_shape) {
    if (d <= 0) throw ConfigError("network input shape must be positive");
  }
  if (trunk == TrunkKind::kConv) {
    if (conv_layers.empty()) throw ConfigError("conv trunk needs at least one conv layer");
    conv_output_shapes();
  }
  if (trunk != TrunkKind::kNone && fc_size <= 0) throw ConfigError("fc_size must be positive");
  if (use_gru && hidden_size <= 0) throw ConfigError("hidden_size must be positive");
  if (num_actions < 2) throw ConfigError("need at least two actions");
  for (Index s : decoder_sizes) {
    if (s <= 0) throw ConfigError("decoder layer sizes must be positive");
  }
  if (aux_heads < 0) throw ConfigError("aux_heads must be non-negative");
  if (!(policy_init_scale > 0)) throw ConfigError("policy_init_scale must be positive");
}

namespace {

enum class Init { kZero, kRelu, kLinear, kPolicy };

struct Slot {
  std::string name;
  Shape shape;
  Init init;
  Index fan_in;
};

std::vector<Slot> layout(const NetworkConfig& c) {
  std::vector<Slot> out;
  auto dense = [&](const std::string& prefix, Index in, Index units, Init init) {
    out.push_back({prefix + ".w", {in, units}, init, in});
    out.push_back({prefix + ".b", {units}, Init::kZero, in});
  };
  Index features = c.obs_size();
  if (c.trunk == TrunkKind::kConv) {
    Index channels = c.input_shape[0];
    const auto shapes = c.conv_output_shapes();
    for (std::size_t i = 0; i < c.conv_layers.size(); ++i) {
      const auto& l = c.conv_layers[i];
      const std::string prefix = "trunk.conv" + std::to_string(i);
      const Index fan_in = channels * l.kernel * l.kernel;
      out.push_back({prefix + ".w", {l.out_channels, channels, l.kernel, l.kernel}, Init::kRelu, fan_in});
      out.push_back({prefix + ".b", {l.out_channels}, Init::kZero, fan_in});
      channels = l.out_channels;
    }
    features = shapes.back()[0] * shapes.back()[1] * shapes.back()[2];
  }
  if (c.trunk != TrunkKind::kNone) {
    dense("trunk.fc", features, c.fc_size, Init::kRelu);
    features = c.fc_size;
  }
  if (c.use_gru) {
    const Index h = c.hidden_size;
    for (const char* gate : {"z", "r", "h"}) {
      out.push_back({std::string("gru.w_") + gate, {features, h}, Init::kLinear, features});
      out.push_back({std::string("gru.u_") + gate, {h, h}, Init::kLinear, h});
      out.push_back({std::string("gru.b_") + gate, {h}, Init::kZero, h});
    }
  }
  const Index core = c.core_size();
  dense("policy", core, c.num_actions, Init::kPolicy);
  dense("value", core, 1, Init::kLinear);
  for (Index k = 0; k < c.aux_heads; ++k) {
    const std::string prefix = "tdae" + std::to_string(k);
    Index in = core;
    for (std::size_t j = 0; j < c.decoder_sizes.size(); ++j) {
      dense(prefix + ".fc" + std::to_string(j), in, c.decoder_sizes[j], Init::kLinear);
      in = c.decoder_sizes[j];
    }
    dense(prefix + ".out", in, c.obs_size(), Init::kLinear);
  }
  return out;
}

}  // namespace

template <typename Scalar>
AgentParams<Scalar> init_params(std::uint64_t seed, const NetworkConfig& config) {
  config.validate();
  AgentParams<Scalar> out{config, {}};
  for (const auto& slot : layout(config)) {
    Tensor<Scalar> t(slot.shape);
    if (slot.init != Init::kZero) {
      Rng rng(stream_seed({seed, tag(StreamTag::kInit), hash_name(slot.name)}));
      double bound = std::sqrt(3.0 / static_cast<double>(slot.fan_in));
      if (slot.init == Init::kRelu) bound *= std::sqrt(2.0);
      if (slot.init == Init::kPolicy) bound *= config.policy_init_scale;
      for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
    out.params.add(slot.name, std::move(t));
  }
  return out;
}

template <typename Scalar>
AgentNet<Scalar>::AgentNet(Graph<Scalar>& graph, AgentParams<Scalar>& params)
    : graph_(&graph), config_(&params.config) {
  std::vector<Var<Scalar>> leaves;
  for (auto& p : params.params) leaves.push_back(graph.parameter(p));
  bind(leaves, params.params);
}

template <typename Scalar>
AgentNet<Scalar>::AgentNet(Graph<Scalar>& graph, const AgentParams<Scalar>& params)
    : graph_(&graph), config_(&params.config) {
  if (graph.recording()) throw UsageError("read-only parameters bound to a recording graph");
  std::vector<Var<Scalar>> leaves;
  for (const auto& p : params.params) leaves.push_back(graph.constant_ref(p.value));
  bind(leaves, params.params);
}

template <typename Scalar>
void AgentNet<Scalar>::bind(const std::vector<Var<Scalar>>& leaves, const ParameterSet<Scalar>& params) {
  const auto slots = layout(*config_);
  if (static_cast<Index>(slots.size()) != params.size()) {
    throw ConfigError("parameter set does not match network config (" + std::to_string(params.size()) + " vs " +
                      std::to_string(slots.size()) + " tensors)");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& p = params[static_cast<Index>(i)];
    if (p.name != slots[i].name || p.value.shape() != slots[i].shape) {
      throw ConfigError("parameter '" + p.name + "' " + shape_string(p.value.shape()) + " does not match expected '" +
                        slots[i].name + "' " + shape_string(slots[i].shape));
    }
  }
  std::size_t at = 0;
  auto next = [&]() { return leaves[at++]; };
  auto dense = [&]() {
    Dense d;
    d.w = next();
    d.b = next();
    return d;
  };
  const auto& c = *config_;
  if (c.trunk == TrunkKind::kConv) {
    for (std::size_t i = 0; i < c.conv_layers.size(); ++i) conv_.push_back(dense());
  }
  if (c.trunk != TrunkKind::kNone) fc_ = dense();
  if (c.use_gru) {
    wz_ = next(), uz_ = next(), bz_ = next();
    wr_ = next(), ur_ = next(), br_ = next();
    wh_ = next(), uh_ = next(), bh_ = next();
  }
  policy_ = dense();
  value_ = dense();
  for (Index k = 0; k < c.aux_heads; ++k) {
    std::vector<Dense> layers;
    for (std::size_t j = 0; j <= c.decoder_sizes.size(); ++j) layers.push_back(dense());
    decoders_.push_back(std::move(layers));
  }
}

template <typename Scalar>
Var<Scalar> AgentNet<Scalar>::trunk(Var<Scalar> obs) const {
  const auto& c = *config_;
  const Shape& s = obs.shape();
  if (s.size() != 4 || s[1] != c.input_shape[0] || s[2] != c.input_shape[1] || s[3] != c.input_shape[2]) {
    throw DimensionError("trunk: observation batch " + shape_string(s) + " does not match input shape [N x " +
                         std::to_string(c.input_shape[0]) + "x" + std::to_string(c.input_shape[1]) + "x" +
                         std::to_string(c.input_shape[2]) + "]");
  }
  const Index n = s[0];
  Var<Scalar> x = obs;
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    x = relu(add_bias(conv2d(x, conv_[i].w, c.conv_layers[i].stride), conv_[i].b));
  }
  x = reshape(x, {n, x.size() / n});
  if (c.trunk != TrunkKind::kNone) x = relu(linear(x, fc_.w, fc_.b));
  return x;
}

template <typename Scalar>
Var<Scalar> AgentNet<Scalar>::gru_step(Var<Scalar> x, Var<Scalar> h) const {
  if (!config_->use_gru) throw UsageError("gru_step on a network without a GRU");
  const Var<Scalar> z = sigmoid(add_bias(add(matmul(x, wz_), matmul(h, uz_)), bz_));
  const Var<Scalar> r = sigmoid(add_bias(add(matmul(x, wr_), matmul(h, ur_)), br_));
  const Var<Scalar> cand = tanh(add_bias(add(matmul(x, wh_), matmul(mul(r, h), uh_)), bh_));
  // (1 - z) * h + z * cand
  return add(h, mul(z, sub(cand, h)));
}

template <typename Scalar>
Var<Scalar> AgentNet<Scalar>::core(Var<Scalar> obs, Var<Scalar> h) const {
  const Var<Scalar> features = trunk(obs);
  return config_->use_gru ? gru_step(features, h) : features;
}

template <typename Scalar>
HeadsOutput<Scalar> AgentNet<Scalar>::heads(Var<Scalar> core, bool with_aux) const {
  const Shape& s = core.shape();
  if (s.size() != 2 || s[1] != config_->core_size()) {
    throw DimensionError("heads: core state " + shape_string(s) + " does not match size " +
                         std::to_string(config_->core_size()));
  }
  HeadsOutput<Scalar> out;
  out.logits = linear(core, policy_.w, policy_.b);
  out.value = reshape(linear(core, value_.w, value_.b), {s[0]});
  if (with_aux) {
    for (const auto& layers : decoders_) {
      Var<Scalar> y = core;
      for (std::size_t j = 0; j + 1 < layers.size(); ++j) y = sigmoid(linear(y, layers[j].w, layers[j].b));
      out.psi.push_back(linear(y, layers.back().w, layers.back().b));
    }
  }
  return out;
}

template AgentParams<double> init_params<double>(std::uint64_t, const NetworkConfig&);
template AgentParams<float> init_params<float>(std::uint64_t, const NetworkConfig&);
template class AgentNet<double>;
template class AgentNet<float>;

}  // namespace tdae
