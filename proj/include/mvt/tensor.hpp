#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mvt/errors.hpp"

namespace mvt {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

std::string shape_string(const Shape& shape);
Index shape_size(const Shape& shape);

/// Dense row-major n-dimensional array.
///
/// Rank-2 tensors are the workhorse; a rank-1 tensor of length n behaves as a
/// 1×n row when viewed as a matrix. Higher ranks are only used for image data
/// (rows × cols × channels) and are flattened by reshape before any math.
template <typename Scalar>
class Tensor {
 public:
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() : Tensor(Shape{1}) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Vector<Scalar> data);

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    Tensor t(Shape{m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }
  static Tensor scalar(Scalar value);
  static Tensor full(Shape shape, Scalar value);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  /// Matrix extents: rank-1 → 1×n; rank-2 → rows×cols; rank≥3 → dim0 × rest.
  Index rows() const;
  Index cols() const;

  MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  Vector<Scalar>& data() { return data_; }
  const Vector<Scalar>& data() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }
  Scalar& at(Index r, Index c) { return data_[r * cols() + c]; }
  Scalar at(Index r, Index c) const { return data_[r * cols() + c]; }

  /// Same data, new extents; product must be preserved.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  Vector<Scalar> data_;
};

/// Named parameter collection, iterated in lexicographic name order.
template <typename Scalar>
using ParamStore = std::map<std::string, Tensor<Scalar>>;

template <typename Scalar>
Index parameter_count(const ParamStore<Scalar>& store) {
  Index n = 0;
  for (const auto& [name, t] : store) n += t.size();
  return n;
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mvt
