// SPDX-License-Identifier: Apache-2.0
#include "tdae/graph.hpp"

namespace tdae {

template <typename Scalar>
const Tensor<Scalar>* GradientMap<Scalar>::find(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return &grads[i];
  }
  return nullptr;
}

template <typename Scalar>
const Tensor<Scalar>& GradientMap<Scalar>::at(const std::string& name) const {
  const auto* g = find(name);
  if (!g) throw UsageError("no gradient recorded for parameter '" + name + "'");
  return *g;
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::constant(Tensor<Scalar> value) {
  return push("constant", std::move(value), {}, [](Graph&, Index, const Tensor<Scalar>&) {});
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::constant_ref(const Tensor<Scalar>& value) {
  check_finite(value, "constant");
  Node n;
  n.op = "constant";
  n.alias = &value;
  nodes_.push_back(std::move(n));
  return Var<Scalar>(this, size() - 1);
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::parameter(Parameter<Scalar>& param) {
  if (!param.value.all_finite()) throw NumericError("parameter '" + param.name + "' holds non-finite values");
  Node n;
  n.op = "parameter";
  n.alias = &param.value;
  n.requires_grad = recording_;
  n.param = &param;
  nodes_.push_back(std::move(n));
  return Var<Scalar>(this, size() - 1);
}

template <typename Scalar>
const Tensor<Scalar>& Graph<Scalar>::value(Index id) const {
  if (id < 0 || id >= size()) throw UsageError("node id out of range");
  const Node& n = node(id);
  return n.alias ? *n.alias : n.owned;
}

template <typename Scalar>
Tensor<Scalar>* Graph<Scalar>::grad_slot(Index id) {
  Node& n = node(id);
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor<Scalar>::zeros(value(id).shape());
    n.has_grad = true;
  }
  return &n.grad;
}

template <typename Scalar>
GradientMap<Scalar> Graph<Scalar>::backward(Var<Scalar> loss) {
  if (!recording_) throw UsageError("backward() on a non-recording graph");
  if (consumed_) throw UsageError("backward() called twice on the same graph");
  if (&loss.graph() != this) throw UsageError("backward() on a loss from another graph");
  if (loss.size() != 1) throw DimensionError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  if (!requires_grad(loss.id())) throw UsageError("backward() on a loss detached from every parameter");

  visits_ = 0;
  grad_slot(loss.id())->data().setOnes();
  for (Index i = loss.id(); i >= 0; --i) {
    Node& n = node(i);
    if (!n.requires_grad || !n.has_grad) continue;
    if (n.backward) {
      n.backward(*this, i, n.grad);
      ++visits_;
    }
    if (!n.param) {
      n.grad = Tensor<Scalar>();
      n.has_grad = false;
    }
  }

  GradientMap<Scalar> out;
  std::vector<const Parameter<Scalar>*> seen;
  for (Index i = 0; i < size(); ++i) {
    Node& n = node(i);
    if (!n.param) continue;
    Tensor<Scalar> g = n.has_grad ? std::move(n.grad) : Tensor<Scalar>::zeros(n.param->value.shape());
    bool merged = false;
    for (std::size_t k = 0; k < seen.size(); ++k) {
      if (seen[k] == n.param) {
        out.grads[k].data() += g.data();
        merged = true;
        break;
      }
    }
    if (!merged) {
      seen.push_back(n.param);
      out.names.push_back(n.param->name);
      out.grads.push_back(std::move(g));
    }
  }

  for (auto& n : nodes_) {
    n.backward = nullptr;
    n.grad = Tensor<Scalar>();
    n.has_grad = false;
  }
  consumed_ = true;
  return out;
}

template <typename Scalar>
void Graph<Scalar>::check_owner(const Var<Scalar>& v, std::string_view op) const {
  if (&v.graph() != this) throw UsageError(std::string(op) + ": operands belong to different graphs");
  if (v.id() < 0 || v.id() >= size()) throw UsageError(std::string(op) + ": invalid operand");
}

template <typename Scalar>
void Graph<Scalar>::check_finite(const Tensor<Scalar>& value, std::string_view op) {
  if (!value.all_finite()) throw NumericError("non-finite value produced by " + std::string(op));
}

template struct GradientMap<double>;
template struct GradientMap<float>;
template class Graph<double>;
template class Graph<float>;

}  // namespace tdae
