// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tdae/ops.hpp"

namespace tdae {

/// One synchronous update's worth of experience: W workers x n steps.
/// Per-transition arrays use the row index t * W + w, so every time step is
/// a contiguous block of W rows.
template <typename Scalar>
struct SegmentBatch {
  Index workers = 0;
  Index length = 0;
  std::array<Index, 3> obs_shape{};

  Tensor<Scalar> observations;  // [n*W x C x H x W], X_t (start of transition t)
  std::vector<Index> actions;
  std::vector<double> rewards;              // R_{t+1}
  std::vector<std::uint8_t> terminated;     // task end after transition t
  std::vector<std::uint8_t> truncated;      // timeout after transition t
  std::vector<std::uint8_t> episode_start;  // hidden state was reset before transition t
  Tensor<Scalar> final_obs;                 // [n*W x ...], S_{t+1} where truncated[t], else zero
  Tensor<Scalar> bootstrap_obs;             // [W x ...], S_{t+n} of the episode running at the segment end
  Tensor<Scalar> initial_hidden;            // [W x hidden], detached; empty without a GRU

  Index transitions() const { return workers * length; }
  Index row(Index t, Index w) const { return t * workers + w; }
  bool done(Index r) const { return terminated[static_cast<std::size_t>(r)] || truncated[static_cast<std::size_t>(r)]; }
  /// True where transition r bootstraps from a separately evaluated next
  /// state: truncation anywhere, or a live episode at the segment end.
  bool needs_next_eval(Index r) const;
  /// Throws DimensionError when array lengths disagree with W * n.
  void validate() const;
};

/// Return recursion over one worker's row:
///   G_t = R_{t+1}                          if terminated at t
///   G_t = R_{t+1} + gamma * next_value[t]  if truncated at t, or t = n-1
///   G_t = R_{t+1} + gamma * G_{t+1}        otherwise
/// `next_value[t]` is only read where the second case applies.
std::vector<double> discounted_returns(std::span<const double> rewards, std::span<const std::uint8_t> terminated,
                                       std::span<const std::uint8_t> truncated, std::span<const double> next_value,
                                       double gamma);

/// Same returns by explicit forward summation of gamma^k R_{t+k+1} for
/// every t, stopping at the first cut. Independent oracle for the above.
std::vector<double> brute_force_return_oracle(std::span<const double> rewards,
                                              std::span<const std::uint8_t> terminated,
                                              std::span<const std::uint8_t> truncated,
                                              std::span<const double> next_value, double gamma);

/// n-step returns for a whole batch (row layout t * W + w). `next_values`
/// holds V of the bootstrap state wherever needs_next_eval() is true.
template <typename Scalar>
std::vector<double> nstep_returns(const SegmentBatch<Scalar>& batch, std::span<const double> next_values, double gamma);

template <typename Scalar>
struct A2CTerms {
  Var<Scalar> policy;   // -mean(log pi(a|s) * A), A held constant
  Var<Scalar> value;    // mean((G - V)^2), G held constant
  Var<Scalar> entropy;  // -mean(H(pi(.|s)))
  double mean_entropy = 0.0;
};

/// logits [N x A], values [N]; actions and returns have N entries.
template <typename Scalar>
A2CTerms<Scalar> a2c_loss(Var<Scalar> logits, Var<Scalar> values, std::span<const Index> actions,
                          std::span<const double> returns);
/// As above with the advantage formed against a fixed `baseline` instead of
/// the current value estimates. Gradient checks freeze it this way.
template <typename Scalar>
A2CTerms<Scalar> a2c_loss(Var<Scalar> logits, Var<Scalar> values, std::span<const Index> actions,
                          std::span<const double> returns, std::span<const double> baseline);

struct TDAESpec {
  double gamma_aux = 0.0;
  double lambda = 0.0;
  void validate() const;  // gamma_aux in [0, 1), lambda >= 0
};

/// Scaled TD(0) loss of one TD-AE head:
///   e = (1 - g) X_t + g * psi_next - psi,   loss = mean(e^2) over all pixels
/// psi [N x d] is the (1 - g)-scaled prediction at S_t; psi_next [N x d]
/// holds the detached prediction at S_{t+1}, ignored where terminated.
template <typename Scalar>
Var<Scalar> tdae_loss(Var<Scalar> psi, const Tensor<Scalar>& observations, const Tensor<Scalar>& psi_next,
                      std::span<const std::uint8_t> terminated, double gamma_aux);

struct LossWeights {
  double value = 0.5;
  double entropy = 0.001;
};

template <typename Scalar>
struct LossBreakdown {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy_loss = 0.0;   // -mean entropy
  double mean_entropy = 0.0;
  double tdae_loss = 0.0;      // sum of unweighted head losses
  double tdae_weighted = 0.0;  // sum of lambda_k * head loss
  double total = 0.0;
  Var<Scalar> total_var;
};

/// total = policy + w_v * value + w_H * entropy + sum_k lambda_k * tdae_k.
/// With no heads (or all lambda 0) the value equals the A2C loss bitwise.
template <typename Scalar>
LossBreakdown<Scalar> total_loss(const A2CTerms<Scalar>& a2c, std::span<const Var<Scalar>> tdae_terms,
                                 std::span<const TDAESpec> specs, const LossWeights& weights);

}  // namespace tdae
