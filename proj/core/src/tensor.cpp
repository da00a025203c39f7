// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "qpipe/tensor.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "qpipe/error.hpp"

namespace qpipe {

std::size_t element_count(const Shape& shape) {
  if (shape.empty()) {
    return 0;
  }
  std::size_t n = 1;
  for (auto extent : shape) {
    n *= extent;
  }
  return n;
}

Tensor::Tensor(std::vector<float> data, Shape shape)
    : data_(std::move(data)), shape_(std::move(shape)) {
  for (auto extent : shape_) {
    if (extent == 0) {
      throw InvalidArgument("tensor shape has a zero extent");
    }
  }
  if (element_count(shape_) != data_.size()) {
    throw InvalidArgument("tensor shape describes " +
                          std::to_string(element_count(shape_)) +
                          " elements but data holds " +
                          std::to_string(data_.size()));
  }
  for (float v : data_) {
    if (!std::isfinite(v)) {
      throw InvalidArgument("tensor contains a non-finite value");
    }
  }
}

namespace {

Shape flat_shape(std::size_t n) {
  if (n == 0) {
    return {};
  }
  return {static_cast<std::uint32_t>(n)};
}

}  // namespace

Tensor::Tensor(std::vector<float> data)
    : Tensor(data, flat_shape(data.size())) {}


}  // namespace qpipe
