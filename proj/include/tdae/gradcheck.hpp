// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

#include "tdae/graph.hpp"

namespace tdae {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double analytic = 0.0;  // at the worst coordinate
  double numeric = 0.0;
  Index coordinates = 0;
};

/// Compares backward() against central differences (f(p+h) - f(p-h)) / 2h
/// for every coordinate of every parameter. The relative error of a
/// coordinate is |a - n| / max(|a|, |n|, floor); the floor keeps
/// coordinates whose true gradient is ~0 from reporting finite-difference
/// noise as relative error. Parameters are restored bit-exactly.
///
/// `loss_fn(Graph<double>&)` must rebuild the loss from `params` each call.
template <typename LossFn>
GradCheckResult check_gradients(LossFn&& loss_fn, ParameterSet<double>& params, double h = 1e-5,
                                double floor = 1e-6) {
  GradientMap<double> analytic;
  {
    Graph<double> g;
    Var<double> loss = loss_fn(g);
    if (loss.requires_grad()) analytic = g.backward(loss);
  }
  auto evaluate = [&] {
    Graph<double> g(false);
    return loss_fn(g).item();
  };

  GradCheckResult result;
  for (auto& p : params) {
    const Tensor<double>* ga = analytic.find(p.name);
    for (Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = evaluate();
      p.value[i] = saved - h;
      const double down = evaluate();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = ga ? (*ga)[i] : 0.0;
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (rel > result.max_rel_error || result.worst_index < 0) {
        result.max_rel_error = std::max(rel, result.max_rel_error);
        result.worst_param = p.name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace tdae
