// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qpipe/tensor.hpp"

namespace qpipe::model {

struct ModelDims {
  std::uint32_t input_dim = 64;
  std::uint32_t hidden_dim = 128;
  std::uint32_t n_classes = 10;
  std::uint32_t blocks = 8;
};

/// One pre-activation block: y = skip(x) + W * act(x) + bias.
///
/// The first block skips the activation (it sees raw inputs) and every block
/// whose input and output widths match adds the identity skip.
struct Block {
  std::uint32_t in = 0;
  std::uint32_t out = 0;
  bool activate_input = true;
  bool residual = false;
  std::vector<float> weight;  // row-major [out][in]
  std::vector<float> bias;    // [out]
  std::vector<float> weight_by_input;  // transposed copy [in][out]
};

/// Smooth GELU (tanh form) evaluated in float.
float gelu(float x);

/// Deterministic stack of blocks ending in a linear classifier head.
///
/// Weights and biases are drawn block by block (all weights row-major, then
/// the biases) from Xorshift64Star(seed) as (2u - 1) / sqrt(in) with
/// u = uniform_float(). Every dot product accumulates bias first and then
/// the inputs in index order, in float.
class ToyModel {
 public:
  static ToyModel build(std::uint64_t seed, const ModelDims& dims,
                        bool with_bias = true);

  const ModelDims& dims() const { return dims_; }
  std::size_t num_blocks() const { return blocks_.size(); }
  const Block& block(std::size_t k) const { return blocks_.at(k); }

  /// Multiply-accumulate count of each block, used as partitioning cost.
  std::vector<double> block_costs() const;

  /// Applies blocks [lo, hi) to a [rows x width] batch.
  Tensor forward_range(std::size_t lo, std::size_t hi, const Tensor& batch) const;
  Tensor forward(const Tensor& batch) const {
    return forward_range(0, blocks_.size(), batch);
  }

 private:
  ModelDims dims_;
  std::vector<Block> blocks_;
};

/// A contiguous run of blocks [lo, hi) placed on one device.
struct Shard {
  int stage_id = 0;
  std::size_t lo = 0;
  std::size_t hi = 0;

  friend bool operator==(const Shard&, const Shard&) = default;
};

/// Contiguous partition minimizing the largest per-stage cost (exact dynamic
/// program over cut points). Ties go to the partition with earlier cuts.
std::vector<Shard> partition_even(std::span<const double> block_costs,
                                  std::size_t n_stages);

/// Runs the shard's blocks over `activation`. An empty shard is the identity.
Tensor forward_shard(const ToyModel& model, const Shard& shard,
                     const Tensor& activation);

/// Row-wise argmax of a [rows x classes] logit tensor; ties pick the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

struct DatasetConfig {
  std::uint64_t seed = 11;
  std::size_t microbatches = 32;
  std::uint32_t microbatch_size = 64;
  double center_scale = 2.0;
  /// Each sample is multiplied by exp(U(log(contrast_min), log(contrast_max))).
  double contrast_min = 0.25;
  double contrast_max = 4.0;
};

struct Microbatch {
  std::uint64_t id = 0;
  Tensor inputs;  // [microbatch_size x input_dim]
  std::vector<int> labels;
};

/// Gaussian clusters: one N(0, center_scale^2) center per class, samples
/// center + N(0, 1), scaled by a per-sample contrast factor.
std::vector<Microbatch> make_dataset(const DatasetConfig& cfg,
                                     const ModelDims& dims);

}  // namespace qpipe::model
