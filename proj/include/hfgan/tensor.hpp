#pragma once

#include <Eigen/Core>

#include <cassert>
#include <initializer_list>
#include <string>
#include <vector>

#include "hfgan/errors.hpp"

namespace hfgan {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Array1 = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape);

/// Dense row-major tensor of rank 0..4. Feature maps use [C, H, W], token
/// sequences [M, C], vectors [C]. Storage is a flat Eigen array.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Storage = Array1<Scalar>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Storage::Zero(numel(shape_))) {}
  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(Storage::Constant(numel(shape_), fill)) {}
  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) throw ShapeError("tensor data size does not match shape " + shape_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(Index i, Index j) { return data_[i * shape_[1] + j]; }
  Scalar at(Index i, Index j) const { return data_[i * shape_[1] + j]; }
  Scalar& at(Index c, Index y, Index x) { return data_[(c * shape_[1] + y) * shape_[2] + x]; }
  Scalar at(Index c, Index y, Index x) const { return data_[(c * shape_[1] + y) * shape_[2] + x]; }

  /// Leading dimension by the product of the rest.
  MatrixMap matrix() { return MatrixMap(data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data(), rows(), cols()); }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, data_.template cast<To>().eval());
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && (data_ == o.data_).all(); }

 private:
  Index rows() const { return shape_.empty() ? 1 : shape_[0]; }
  Index cols() const { return shape_.empty() ? 1 : size() / shape_[0]; }

  Shape shape_;
  Storage data_;
};

}  // namespace hfgan
