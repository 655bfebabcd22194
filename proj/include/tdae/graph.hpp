// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "tdae/tensor.hpp"

namespace tdae {

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its graph lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* graph, Index id) : graph_(graph), id_(id) {}

  Graph<Scalar>& graph() const;
  Index id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor<Scalar>& value() const;
  const Shape& shape() const { return value().shape(); }
  Index size() const { return value().size(); }
  Scalar item() const { return value().item(); }
  bool requires_grad() const;

 private:
  Graph<Scalar>* graph_ = nullptr;
  Index id_ = -1;
};

/// Gradients for every parameter leaf of a graph, in registration order.
template <typename Scalar>
struct GradientMap {
  std::vector<std::string> names;
  std::vector<Tensor<Scalar>> grads;

  const Tensor<Scalar>* find(const std::string& name) const;
  const Tensor<Scalar>& at(const std::string& name) const;
};

/// Append-only tape of primitive operations. Nodes are created in
/// topological order, so the reverse sweep in backward() is a single pass
/// over the node array. A non-recording graph evaluates values only; it is
/// what inference uses.
template <typename Scalar>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, Index self, const Tensor<Scalar>& grad_out)>;

  explicit Graph(bool record = true) : recording_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  Index size() const { return static_cast<Index>(nodes_.size()); }

  Var<Scalar> constant(Tensor<Scalar> value);
  /// Constant that aliases `value`; the caller keeps it alive and unchanged.
  Var<Scalar> constant_ref(const Tensor<Scalar>& value);
  /// Leaf that receives a gradient. Aliases the parameter's tensor.
  Var<Scalar> parameter(Parameter<Scalar>& param);

  /// Records an operation result. `backward` is stored only when the graph
  /// records and some input requires a gradient.
  template <typename Fn>
  Var<Scalar> push(std::string_view op, Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                   Fn&& backward) {
    return push_impl(op, std::move(value), std::vector<Var<Scalar>>(inputs), std::forward<Fn>(backward));
  }
  template <typename Fn>
  Var<Scalar> push(std::string_view op, Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs,
                   Fn&& backward) {
    return push_impl(op, std::move(value), inputs, std::forward<Fn>(backward));
  }

  const Tensor<Scalar>& value(Index id) const;
  bool requires_grad(Index id) const { return node(id).requires_grad; }
  const std::vector<Index>& inputs(Index id) const { return node(id).inputs; }
  std::string_view op_name(Index id) const { return node(id).op; }

  /// Gradient accumulator of a node during backward, zero-initialised on
  /// first access; nullptr when the node does not require a gradient.
  Tensor<Scalar>* grad_slot(Index id);

  /// Reverse sweep from a scalar loss. Consumes the graph: a second call
  /// is an error.
  GradientMap<Scalar> backward(Var<Scalar> loss);

  /// Number of nodes whose local-gradient rule ran in the last backward.
  Index last_backward_visits() const { return visits_; }

 private:
  struct Node {
    Tensor<Scalar> owned;
    const Tensor<Scalar>* alias = nullptr;
    Tensor<Scalar> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<Index> inputs;
    BackwardFn backward;
    Parameter<Scalar>* param = nullptr;
    std::string_view op;
  };

  template <typename Fn>
  Var<Scalar> push_impl(std::string_view op, Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs,
                        Fn&& backward) {
    Node n;
    n.op = op;
    n.inputs.reserve(inputs.size());
    for (const auto& v : inputs) {
      check_owner(v, op);
      n.inputs.push_back(v.id());
      n.requires_grad = n.requires_grad || (recording_ && node(v.id()).requires_grad);
    }
    check_finite(value, op);
    n.owned = std::move(value);
    if (n.requires_grad) n.backward = BackwardFn(std::forward<Fn>(backward));
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, size() - 1);
  }

  const Node& node(Index id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Node& node(Index id) { return nodes_[static_cast<std::size_t>(id)]; }
  void check_owner(const Var<Scalar>& v, std::string_view op) const;
  static void check_finite(const Tensor<Scalar>& value, std::string_view op);

  bool recording_;
  bool consumed_ = false;
  Index visits_ = 0;
  std::deque<Node> nodes_;  // stable references across push_back
};

template <typename Scalar>
Graph<Scalar>& Var<Scalar>::graph() const {
  if (!graph_) throw UsageError("use of an empty Var");
  return *graph_;
}

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::value() const {
  return graph().value(id_);
}

template <typename Scalar>
bool Var<Scalar>::requires_grad() const {
  return graph().requires_grad(id_);
}

}  // namespace tdae
