// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "tdae/errors.hpp"

namespace tdae {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major n-dimensional array. An empty shape denotes a scalar.
template <typename Scalar>
class Tensor {
 public:
  using Vector = VectorX<Scalar>;
  using MatrixMap = Eigen::Map<RowMatrixX<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrixX<Scalar>>;

  Tensor() : data_(Vector::Zero(1)) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Vector data);
  Tensor(Shape shape, std::initializer_list<Scalar> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar value);
  static Tensor scalar(Scalar value) { return constant({}, value); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index dim(Index axis) const;

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }
  Scalar item() const;

  /// View as a matrix with the leading dimension as rows and all trailing
  /// dimensions flattened into columns. Scalars map to 1x1, vectors to 1xN.
  MatrixMap matrix();
  ConstMatrixMap matrix() const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Index rows() const;
  Shape shape_;
  Vector data_;
};

/// A named learnable tensor. Parameters are the only leaves that receive
/// gradients.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
};

/// Ordered collection of parameters with unique names.
template <typename Scalar>
class ParameterSet {
 public:
  Parameter<Scalar>& add(std::string name, Tensor<Scalar> value);
  Index size() const { return static_cast<Index>(params_.size()); }
  Parameter<Scalar>& operator[](Index i) { return params_[static_cast<std::size_t>(i)]; }
  const Parameter<Scalar>& operator[](Index i) const { return params_[static_cast<std::size_t>(i)]; }
  Index index_of(const std::string& name) const;  // -1 when absent
  Parameter<Scalar>& at(const std::string& name);
  const Parameter<Scalar>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_of(name) >= 0; }
  Index total_size() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const;

 private:
  std::vector<Parameter<Scalar>> params_;
};

}  // namespace tdae
