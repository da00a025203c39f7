// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qpipe {

using Shape = std::vector<std::uint32_t>;

/// Number of elements described by `shape`. An empty shape describes zero elements.
std::size_t element_count(const Shape& shape);

/// Dense float32 activation with a row-major shape.
///
/// A default-constructed tensor is the empty tensor. Any non-empty tensor has
/// strictly positive extents whose product equals the number of values, and
/// holds only finite values.
class Tensor {
 public:
  Tensor() = default;

  /// Throws InvalidArgument on a shape/data mismatch, a zero extent, or a
  /// non-finite value.
  Tensor(std::vector<float> data, Shape shape);

  /// One-dimensional tensor; an empty vector yields the empty tensor.
  explicit Tensor(std::vector<float> data);

  std::span<const float> values() const { return data_; }
  std::span<float> values() { return data_; }
  const std::vector<float>& data() const { return data_; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<float> data_;
  Shape shape_;
};

}  // namespace qpipe
