#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adv/errors.hpp"

namespace adv {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

// Dense row-major numeric array: flat storage plus an explicit shape.
template <typename Scalar>
struct Tensor {
  Shape shape;
  ArrayX<Scalar> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(ArrayX<Scalar>::Zero(shape_numel(shape))) {}
  Tensor(Shape s, ArrayX<Scalar> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor from(Shape s, std::initializer_list<Scalar> values) {
    Tensor t(std::move(s));
    if (static_cast<Index>(values.size()) != t.numel())
      throw ShapeError("initializer length does not match shape " + shape_str(t.shape));
    Index i = 0;
    for (Scalar v : values) t.data[i++] = v;
    return t;
  }

  Index numel() const { return data.size(); }
  Index dim(std::size_t i) const { return shape.at(i); }

  // Row-major multi-index access; handy in tests, not on hot paths.
  Scalar& at(std::initializer_list<Index> idx) { return data[flat_index(idx)]; }
  Scalar at(std::initializer_list<Index> idx) const { return data[flat_index(idx)]; }

  template <typename T>
  Tensor<T> cast() const {
    return Tensor<T>(shape, data.template cast<T>());
  }

 private:
  Index flat_index(std::initializer_list<Index> idx) const {
    if (idx.size() != shape.size()) throw ShapeError("index rank does not match shape " + shape_str(shape));
    Index flat = 0;
    std::size_t d = 0;
    for (Index i : idx) {
      if (i < 0 || i >= shape[d]) throw ShapeError("index out of range for shape " + shape_str(shape));
      flat = flat * shape[d] + i;
      ++d;
    }
    return flat;
  }
};

// 2-D matrix views over the flat row-major storage.
template <typename Scalar>
Eigen::Map<MatrixR<Scalar>> as_matrix(Tensor<Scalar>& t, Index rows, Index cols) {
  if (rows * cols != t.numel())
    throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " does not cover tensor of shape " + shape_str(t.shape));
  return {t.data.data(), rows, cols};
}

template <typename Scalar>
Eigen::Map<const MatrixR<Scalar>> as_matrix(const Tensor<Scalar>& t, Index rows, Index cols) {
  if (rows * cols != t.numel())
    throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " does not cover tensor of shape " + shape_str(t.shape));
  return {t.data.data(), rows, cols};
}

template <typename Scalar>
bool same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape == b.shape;
}

template <typename Scalar>
bool all_finite(const Tensor<Scalar>& t) {
  return t.data.isFinite().all();
}

template <typename Scalar>
Scalar linf_dist(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!same_shape(a, b))
    throw ShapeError("linf_dist shape mismatch: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  if (a.numel() == 0) return Scalar(0);
  return (a.data - b.data).abs().maxCoeff();
}

}  // namespace adv
