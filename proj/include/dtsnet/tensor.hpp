#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dtsnet/errors.hpp"

namespace dtsnet {

using Index = Eigen::Index;

/// Row-major tensor dimensions. Every dim is positive.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) { validate(); }

  int rank() const { return static_cast<int>(dims_.size()); }
  Index operator[](int axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
  Index back() const { return dims_.back(); }
  const std::vector<Index>& dims() const { return dims_; }

  Index numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), Index{1}, std::multiplies<>());
  }

  /// Product of dims strictly before `axis`.
  Index outer(int axis) const {
    Index n = 1;
    for (int i = 0; i < axis; ++i) n *= dims_[static_cast<std::size_t>(i)];
    return n;
  }
  /// Product of dims strictly after `axis`.
  Index inner(int axis) const {
    Index n = 1;
    for (int i = axis + 1; i < rank(); ++i) n *= dims_[static_cast<std::size_t>(i)];
    return n;
  }

  Shape with(int axis, Index value) const {
    auto dims = dims_;
    dims.at(static_cast<std::size_t>(axis)) = value;
    return Shape(std::move(dims));
  }

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }
  friend bool operator!=(const Shape& a, const Shape& b) { return !(a == b); }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ']';
    return os.str();
  }

 private:
  void validate() const {
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (dims_[i] <= 0) {
        throw ShapeError("dim " + std::to_string(i) + " must be positive, got " +
                         std::to_string(dims_[i]));
      }
    }
  }

  std::vector<Index> dims_;
};

/// Dense row-major tensor templated on scalar; storage is an Eigen column vector.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_.numel())) {}
  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  /// Storage left uninitialized; for outputs that are fully overwritten.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    t.data_.resize(shape.numel());
    t.shape_ = std::move(shape);
    return t;
  }
  static Tensor full(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }
  static Tensor from(Shape shape, std::initializer_list<Scalar> values) {
    Vector v(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar x : values) v[i++] = x;
    return Tensor(std::move(shape), std::move(v));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank(); }
  Index dim(int axis) const { return shape_[axis]; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Element access by multi-index.
  Scalar& at(std::initializer_list<Index> idx) { return data_[offset(idx)]; }
  Scalar at(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }

  /// View with the last dim as columns.
  MatrixMap matrix() { return MatrixMap(data(), size() / shape_.back(), shape_.back()); }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(data(), size() / shape_.back(), shape_.back());
  }

  Tensor reshaped(Shape shape) const {
    if (shape.numel() != size()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Index offset(std::initializer_list<Index> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
      throw ShapeError("index rank " + std::to_string(idx.size()) + " != tensor rank " +
                       std::to_string(rank()));
    }
    Index off = 0;
    int axis = 0;
    for (Index i : idx) {
      if (i < 0 || i >= shape_[axis]) {
        throw ShapeError("index " + std::to_string(i) + " out of range on dim " +
                         std::to_string(axis));
      }
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  Vector data_;
};

}  // namespace dtsnet
