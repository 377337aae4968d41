// Copyright 2026 The emamba-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "emamba/error.hpp"

namespace emamba {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape);

/// Flat row-major storage plus a dimension list. The scalar type decides
/// whether this is a reference (real) tensor or an integer payload.
template <typename Scalar>
struct DenseTensor {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Array data;
  Shape shape;

  DenseTensor() = default;
  DenseTensor(Array values, Shape dims) : data(std::move(values)), shape(std::move(dims)) {
    if (shape_size(shape) != data.size()) {
      throw ConfigError("tensor shape " + shape_string(shape) + " does not match " +
                        std::to_string(data.size()) + " elements");
    }
  }

  static DenseTensor zeros(Shape dims) {
    const Index n = shape_size(dims);
    return DenseTensor(Array::Zero(n), std::move(dims));
  }
  static DenseTensor vector(std::initializer_list<Scalar> values) {
    Array a(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) a[i++] = v;
    return DenseTensor(std::move(a), Shape{static_cast<Index>(values.size())});
  }

  Index size() const { return data.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Index dim(Index i) const { return shape.at(static_cast<std::size_t>(i)); }

  Scalar operator[](Index i) const { return data[i]; }

  /// Rows x cols view of a rank-2 tensor (rank-1 is a single row).
  Eigen::Map<const RowMatrix> matrix() const {
    const Index rows = rank() >= 2 ? dim(0) : 1;
    const Index cols = rows == 0 ? 0 : size() / rows;
    return Eigen::Map<const RowMatrix>(data.data(), rows, cols);
  }
};

using RealTensor = DenseTensor<double>;
using IntTensor = DenseTensor<std::int64_t>;

/// Symmetric fixed-point tensor: value = data * 2^scale_exp, zero point 0.
///
/// Every element lies in [-2^(bits-1), 2^(bits-1) - 1]. Construction checks
/// the range; arithmetic that can leave it (products, sums) must go through
/// the saturating helpers in qnum.hpp.
class QTensor {
 public:
  QTensor() = default;
  QTensor(IntTensor values, int bits, int scale_exp);
  QTensor(IntTensor::Array values, Shape shape, int bits, int scale_exp)
      : QTensor(IntTensor(std::move(values), std::move(shape)), bits, scale_exp) {}

  static QTensor zeros(Shape shape, int bits, int scale_exp) {
    return QTensor(IntTensor::zeros(std::move(shape)), bits, scale_exp);
  }

  const IntTensor::Array& data() const { return values_.data; }
  const Shape& shape() const { return values_.shape; }
  const IntTensor& values() const { return values_; }
  Index size() const { return values_.size(); }
  std::int64_t operator[](Index i) const { return values_.data[i]; }
  int bits() const { return bits_; }
  int scale_exp() const { return scale_exp_; }
  static constexpr int zero_point() { return 0; }

  std::int64_t min_value() const { return -(std::int64_t{1} << (bits_ - 1)); }
  std::int64_t max_value() const { return (std::int64_t{1} << (bits_ - 1)) - 1; }

  /// Same values under a new shape with equal element count.
  QTensor reshaped(Shape shape) const {
    return QTensor(IntTensor(values_.data, std::move(shape)), bits_, scale_exp_);
  }

  friend bool operator==(const QTensor& a, const QTensor& b) {
    return a.bits_ == b.bits_ && a.scale_exp_ == b.scale_exp_ &&
           a.values_.shape == b.values_.shape &&
           (a.values_.data == b.values_.data).all();
  }

 private:
  IntTensor values_;
  int bits_ = 8;
  int scale_exp_ = 0;
};

}  // namespace emamba
