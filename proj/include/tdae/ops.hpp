// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "tdae/graph.hpp"

namespace tdae {

// Differentiable primitives. Every function records one node on the graph
// of its operands; operands from different graphs are an error.
//
// Binary elementwise ops require equal shapes, except that either operand
// may be a single-element tensor which is broadcast.

template <typename S> Var<S> add(Var<S> a, Var<S> b);
template <typename S> Var<S> sub(Var<S> a, Var<S> b);
template <typename S> Var<S> mul(Var<S> a, Var<S> b);
template <typename S> Var<S> scale(Var<S> a, S factor);
template <typename S> Var<S> neg(Var<S> a);

template <typename S> Var<S> relu(Var<S> a);
template <typename S> Var<S> sigmoid(Var<S> a);
template <typename S> Var<S> tanh(Var<S> a);
template <typename S> Var<S> square(Var<S> a);
template <typename S> Var<S> exp(Var<S> a);
/// Throws DomainError on any non-positive input.
template <typename S> Var<S> log(Var<S> a);
/// Gradient passes only where lo < a < hi.
template <typename S> Var<S> clamp(Var<S> a, S lo, S hi);

/// Full reduction to a scalar, or reduction over one axis.
template <typename S> Var<S> sum(Var<S> a, std::optional<Index> axis = std::nullopt);
template <typename S> Var<S> mean(Var<S> a, std::optional<Index> axis = std::nullopt);

/// [m x k] . [k x p] -> [m x p]
template <typename S> Var<S> matmul(Var<S> a, Var<S> b);

/// Adds `bias[c]` to every element whose axis-1 index is c. Covers dense
/// layers ([N x k] + [k]) and convolutions ([N x C x H x W] + [C]).
template <typename S> Var<S> add_bias(Var<S> x, Var<S> bias);

/// Valid cross-correlation. Input is [C x H x W] or [N x C x H x W];
/// kernels are [C_out x C_in x kh x kw].
template <typename S> Var<S> conv2d(Var<S> input, Var<S> kernels, Index stride);

template <typename S> Var<S> reshape(Var<S> a, Shape shape);

/// Row-wise log-softmax of [A] or [N x A] logits, max-subtracted.
template <typename S> Var<S> log_softmax(Var<S> logits);
template <typename S> Var<S> softmax(Var<S> logits);

/// out[i] = x[i, index[i]] for x of shape [N x A].
template <typename S> Var<S> pick(Var<S> x, std::span<const Index> index);

/// log(softmax(logits)[action]) as a scalar, for logits of shape [A].
template <typename S> Var<S> softmax_logprob(Var<S> logits, Index action);

/// Rows [begin, begin + count) along axis 0.
template <typename S> Var<S> rows(Var<S> x, Index begin, Index count);

/// Concatenation along axis 0; trailing dimensions must agree.
template <typename S> Var<S> concat_rows(const std::vector<Var<S>>& parts);

/// Same value as a constant; no gradient flows through the result.
template <typename S> Var<S> detach(Var<S> a);

/// Dense layer y = x . w + b with x [N x in], w [in x out], b [out].
template <typename S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
  return add_bias(matmul(x, w), b);
}

}  // namespace tdae
