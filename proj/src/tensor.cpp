// SPDX-License-Identifier: Apache-2.0
#include "tdae/tensor.hpp"

#include <cstring>
#include <sstream>

namespace tdae {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_size(shape_))) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
  }
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::initializer_list<Scalar> values)
    : Tensor(std::move(shape), Eigen::Map<const Vector>(values.begin(), static_cast<Index>(values.size()))) {}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(Shape shape, Scalar value) {
  Tensor t(std::move(shape));
  t.data_.setConstant(value);
  return t;
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  if (axis < 0 || axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

template <typename Scalar>
Index Tensor<Scalar>::rows() const {
  return rank() <= 1 ? 1 : shape_[0];
}

template <typename Scalar>
typename Tensor<Scalar>::MatrixMap Tensor<Scalar>::matrix() {
  const Index r = rows();
  return MatrixMap(data_.data(), r, size() / r);
}

template <typename Scalar>
typename Tensor<Scalar>::ConstMatrixMap Tensor<Scalar>::matrix() const {
  const Index r = rows();
  return ConstMatrixMap(data_.data(), r, size() / r);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename Scalar>
Parameter<Scalar>& ParameterSet<Scalar>::add(std::string name, Tensor<Scalar> value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  params_.push_back({std::move(name), std::move(value)});
  return params_.back();
}

template <typename Scalar>
Index ParameterSet<Scalar>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<Index>(i);
  }
  return -1;
}

template <typename Scalar>
Parameter<Scalar>& ParameterSet<Scalar>::at(const std::string& name) {
  const Index i = index_of(name);
  if (i < 0) throw UsageError("no parameter named '" + name + "'");
  return params_[static_cast<std::size_t>(i)];
}

template <typename Scalar>
const Parameter<Scalar>& ParameterSet<Scalar>::at(const std::string& name) const {
  const Index i = index_of(name);
  if (i < 0) throw UsageError("no parameter named '" + name + "'");
  return params_[static_cast<std::size_t>(i)];
}

template <typename Scalar>
Index ParameterSet<Scalar>::total_size() const {
  Index n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

namespace {
void fnv1a(std::uint64_t& h, const void* bytes, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}
}  // namespace

template <typename Scalar>
std::uint64_t ParameterSet<Scalar>::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    fnv1a(h, p.name.data(), p.name.size());
    for (Index d : p.value.shape()) fnv1a(h, &d, sizeof d);
    fnv1a(h, p.value.data().data(), sizeof(Scalar) * static_cast<std::size_t>(p.value.size()));
  }
  return h;
}

template class Tensor<double>;
template class Tensor<float>;
template class ParameterSet<double>;
template class ParameterSet<float>;

}  // namespace tdae
