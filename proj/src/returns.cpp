// SPDX-License-Identifier: Apache-2.0
#include "tdae/returns.hpp"

#include <cmath>
#include <string>

namespace tdae {

template <typename Scalar>
bool SegmentBatch<Scalar>::needs_next_eval(Index r) const {
  const auto i = static_cast<std::size_t>(r);
  if (terminated[i]) return false;
  return truncated[i] || r / workers == length - 1;
}

template <typename Scalar>
void SegmentBatch<Scalar>::validate() const {
  const auto n = static_cast<std::size_t>(transitions());
  if (workers < 1 || length < 1) throw DimensionError("segment batch needs W >= 1 and n >= 1");
  if (actions.size() != n || rewards.size() != n || terminated.size() != n || truncated.size() != n ||
      episode_start.size() != n) {
    throw DimensionError("segment batch arrays do not have W * n = " + std::to_string(n) + " entries");
  }
  const Index d = obs_shape[0] * obs_shape[1] * obs_shape[2];
  if (observations.size() != transitions() * d || final_obs.size() != transitions() * d ||
      bootstrap_obs.size() != workers * d) {
    throw DimensionError("segment batch observation tensors have the wrong size");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (terminated[i] && truncated[i]) throw DimensionError("transition both terminated and truncated");
  }
}

namespace {
void check_row(std::span<const double> rewards, std::span<const std::uint8_t> terminated,
               std::span<const std::uint8_t> truncated, std::span<const double> next_value, double gamma) {
  if (terminated.size() != rewards.size() || truncated.size() != rewards.size() ||
      next_value.size() != rewards.size()) {
    throw DimensionError("return inputs have mismatched lengths");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError("discount must lie in [0, 1]");
}
}  // namespace

std::vector<double> discounted_returns(std::span<const double> rewards, std::span<const std::uint8_t> terminated,
                                       std::span<const std::uint8_t> truncated, std::span<const double> next_value,
                                       double gamma) {
  check_row(rewards, terminated, truncated, next_value, gamma);
  const std::size_t n = rewards.size();
  std::vector<double> g(n);
  for (std::size_t k = n; k-- > 0;) {
    if (terminated[k]) {
      g[k] = rewards[k];
    } else if (truncated[k] || k + 1 == n) {
      g[k] = rewards[k] + gamma * next_value[k];
    } else {
      g[k] = rewards[k] + gamma * g[k + 1];
    }
  }
  return g;
}

std::vector<double> brute_force_return_oracle(std::span<const double> rewards,
                                              std::span<const std::uint8_t> terminated,
                                              std::span<const std::uint8_t> truncated,
                                              std::span<const double> next_value, double gamma) {
  check_row(rewards, terminated, truncated, next_value, gamma);
  const std::size_t n = rewards.size();
  std::vector<double> g(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double total = 0.0;
    for (std::size_t k = 0; t + k < n; ++k) {
      const std::size_t j = t + k;
      total += std::pow(gamma, static_cast<double>(k)) * rewards[j];
      if (terminated[j]) break;
      if (truncated[j] || j + 1 == n) {
        total += std::pow(gamma, static_cast<double>(k + 1)) * next_value[j];
        break;
      }
    }
    g[t] = total;
  }
  return g;
}

template <typename Scalar>
std::vector<double> nstep_returns(const SegmentBatch<Scalar>& batch, std::span<const double> next_values,
                                  double gamma) {
  const Index w_count = batch.workers, n = batch.length;
  if (static_cast<Index>(next_values.size()) != batch.transitions()) {
    throw DimensionError("next_values must have W * n entries");
  }
  std::vector<double> out(static_cast<std::size_t>(batch.transitions()));
  std::vector<double> r(static_cast<std::size_t>(n)), v(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> term(static_cast<std::size_t>(n)), trunc(static_cast<std::size_t>(n));
  for (Index w = 0; w < w_count; ++w) {
    for (Index t = 0; t < n; ++t) {
      const auto i = static_cast<std::size_t>(batch.row(t, w));
      const auto k = static_cast<std::size_t>(t);
      r[k] = batch.rewards[i];
      term[k] = batch.terminated[i];
      trunc[k] = batch.truncated[i];
      v[k] = next_values[i];
    }
    const auto g = discounted_returns(r, term, trunc, v, gamma);
    for (Index t = 0; t < n; ++t) out[static_cast<std::size_t>(batch.row(t, w))] = g[static_cast<std::size_t>(t)];
  }
  return out;
}

namespace {
template <typename Scalar, typename F>
Var<Scalar> named_term(const char* term, F build) {
  try {
    Var<Scalar> v = build();
    if (!std::isfinite(static_cast<double>(v.item()))) throw NumericError("non-finite value");
    return v;
  } catch (const NumericError& e) {
    throw NumericError(std::string(term) + " is not finite: " + e.what());
  }
}
}  // namespace

template <typename Scalar>
A2CTerms<Scalar> a2c_loss(Var<Scalar> logits, Var<Scalar> values, std::span<const Index> actions,
                          std::span<const double> returns) {
  std::vector<double> baseline(static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) baseline[static_cast<std::size_t>(i)] = values.value()[i];
  return a2c_loss(logits, values, actions, returns, baseline);
}

template <typename Scalar>
A2CTerms<Scalar> a2c_loss(Var<Scalar> logits, Var<Scalar> values, std::span<const Index> actions,
                          std::span<const double> returns, std::span<const double> baseline) {
  const Shape& ls = logits.shape();
  const auto n = static_cast<Index>(actions.size());
  if (ls.size() != 2 || ls[0] != n || values.shape() != Shape{n} || static_cast<Index>(returns.size()) != n) {
    throw DimensionError("a2c_loss: logits " + shape_string(ls) + ", values " + shape_string(values.shape()) +
                         ", " + std::to_string(actions.size()) + " actions and " + std::to_string(returns.size()) +
                         " returns do not agree");
  }
  auto& g = logits.graph();
  Tensor<Scalar> ret({n});
  for (Index i = 0; i < n; ++i) ret[i] = static_cast<Scalar>(returns[static_cast<std::size_t>(i)]);
  if (static_cast<Index>(baseline.size()) != n) throw DimensionError("a2c_loss: baseline needs one entry per action");
  Tensor<Scalar> advantage({n});
  for (Index i = 0; i < n; ++i) {
    advantage[i] = static_cast<Scalar>(returns[static_cast<std::size_t>(i)] - baseline[static_cast<std::size_t>(i)]);
  }

  A2CTerms<Scalar> out;
  const Var<Scalar> logp = log_softmax(logits);
  out.policy = named_term<Scalar>("policy loss", [&] {
    return neg(mean(mul(pick(logp, actions), g.constant(std::move(advantage)))));
  });
  out.value = named_term<Scalar>("value loss", [&] { return mean(square(sub(g.constant(std::move(ret)), values))); });
  out.entropy = named_term<Scalar>("entropy loss", [&] { return mean(sum(mul(exp(logp), logp), Index{1})); });
  out.mean_entropy = -static_cast<double>(out.entropy.item());
  return out;
}

void TDAESpec::validate() const {
  if (!(gamma_aux >= 0.0 && gamma_aux < 1.0)) throw DomainError("TD-AE discount must lie in [0, 1)");
  if (!(lambda >= 0.0)) throw DomainError("TD-AE weight must be non-negative");
}

template <typename Scalar>
Var<Scalar> tdae_loss(Var<Scalar> psi, const Tensor<Scalar>& observations, const Tensor<Scalar>& psi_next,
                      std::span<const std::uint8_t> terminated, double gamma_aux) {
  if (!(gamma_aux >= 0.0 && gamma_aux < 1.0)) throw DomainError("TD-AE discount must lie in [0, 1)");
  const Shape& ps = psi.shape();
  if (ps.size() != 2 || observations.size() != psi.size() || psi_next.size() != psi.size() ||
      static_cast<Index>(terminated.size()) != ps[0]) {
    throw DimensionError("tdae_loss: prediction " + shape_string(ps) + ", observations " +
                         shape_string(observations.shape()) + ", next prediction " + shape_string(psi_next.shape()) +
                         " and " + std::to_string(terminated.size()) + " flags do not agree");
  }
  const Index n = ps[0], d = ps[1];
  const auto g = static_cast<Scalar>(gamma_aux);
  Tensor<Scalar> target(ps);
  for (Index i = 0; i < n; ++i) {
    auto row = target.data().segment(i * d, d);
    row = (Scalar(1) - g) * observations.data().segment(i * d, d);
    if (!terminated[static_cast<std::size_t>(i)]) row += g * psi_next.data().segment(i * d, d);
  }
  return named_term<Scalar>("TD-AE loss", [&] {
    return mean(square(sub(psi.graph().constant(std::move(target)), psi)));
  });
}

template <typename Scalar>
LossBreakdown<Scalar> total_loss(const A2CTerms<Scalar>& a2c, std::span<const Var<Scalar>> tdae_terms,
                                 std::span<const TDAESpec> specs, const LossWeights& weights) {
  if (tdae_terms.size() != specs.size()) throw DimensionError("one TD-AE spec per TD-AE loss term required");
  if (!(weights.value >= 0.0 && weights.entropy >= 0.0)) throw DomainError("loss weights must be non-negative");
  LossBreakdown<Scalar> out;
  out.policy_loss = a2c.policy.item();
  out.value_loss = a2c.value.item();
  out.entropy_loss = a2c.entropy.item();
  out.mean_entropy = a2c.mean_entropy;
  Var<Scalar> total = add(add(a2c.policy, scale(a2c.value, static_cast<Scalar>(weights.value))),
                          scale(a2c.entropy, static_cast<Scalar>(weights.entropy)));
  for (std::size_t k = 0; k < tdae_terms.size(); ++k) {
    specs[k].validate();
    const auto lambda = static_cast<Scalar>(specs[k].lambda);
    total = add(total, scale(tdae_terms[k], lambda));
    out.tdae_loss += tdae_terms[k].item();
    out.tdae_weighted += static_cast<double>(lambda * tdae_terms[k].item());
  }
  out.total = total.item();
  out.total_var = total;
  return out;
}

template struct SegmentBatch<double>;
template struct SegmentBatch<float>;

#define TDAE_INSTANTIATE_TD(S)                                                                                  \
  template std::vector<double> nstep_returns<S>(const SegmentBatch<S>&, std::span<const double>, double);      \
  template A2CTerms<S> a2c_loss<S>(Var<S>, Var<S>, std::span<const Index>, std::span<const double>);          \
  template A2CTerms<S> a2c_loss<S>(Var<S>, Var<S>, std::span<const Index>, std::span<const double>,           \
                                   std::span<const double>);                                                   \
  template Var<S> tdae_loss<S>(Var<S>, const Tensor<S>&, const Tensor<S>&, std::span<const std::uint8_t>,     \
                               double);                                                                        \
  template LossBreakdown<S> total_loss<S>(const A2CTerms<S>&, std::span<const Var<S>>,                          \
                                          std::span<const TDAESpec>, const LossWeights&);

TDAE_INSTANTIATE_TD(double)
TDAE_INSTANTIATE_TD(float)

}  // namespace tdae
