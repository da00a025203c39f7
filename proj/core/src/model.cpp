// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "qpipe/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qpipe/error.hpp"
#include "qpipe/rng.hpp"

namespace qpipe::model {

float gelu(float x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  constexpr float kCubic = 0.044715f;
  const float inner = kSqrt2OverPi * (x + kCubic * x * x * x);
  return 0.5f * x * (1.0f + std::tanh(inner));
}

ToyModel ToyModel::build(std::uint64_t seed, const ModelDims& dims,
                         bool with_bias) {
  if (dims.input_dim == 0 || dims.hidden_dim == 0 || dims.n_classes == 0 ||
      dims.blocks < 2) {
    throw InvalidArgument("model dimensions must be positive with >= 2 blocks");
  }
  ToyModel m;
  m.dims_ = dims;
  Xorshift64Star rng(seed);
  for (std::uint32_t k = 0; k < dims.blocks; ++k) {
    Block b;
    b.in = k == 0 ? dims.input_dim : dims.hidden_dim;
    b.out = k + 1 == dims.blocks ? dims.n_classes : dims.hidden_dim;
    b.activate_input = k > 0;
    b.residual = k > 0 && k + 1 < dims.blocks && b.in == b.out;
    const float scale = 1.0f / std::sqrt(static_cast<float>(b.in));
    b.weight.resize(static_cast<std::size_t>(b.in) * b.out);
    for (auto& w : b.weight) {
      w = (2.0f * rng.uniform_float() - 1.0f) * scale;
    }
    b.weight_by_input.resize(b.weight.size());
    for (std::uint32_t j = 0; j < b.out; ++j) {
      for (std::uint32_t i = 0; i < b.in; ++i) {
        b.weight_by_input[static_cast<std::size_t>(i) * b.out + j] =
            b.weight[static_cast<std::size_t>(j) * b.in + i];
      }
    }
    b.bias.resize(b.out);
    for (auto& v : b.bias) {
      const float drawn = (2.0f * rng.uniform_float() - 1.0f) * scale;
      v = with_bias ? drawn : 0.0f;
    }
    m.blocks_.push_back(std::move(b));
  }
  return m;
}

std::vector<double> ToyModel::block_costs() const {
  std::vector<double> costs;
  costs.reserve(blocks_.size());
  for (const auto& b : blocks_) {
    costs.push_back(static_cast<double>(b.in) * b.out);
  }
  return costs;
}

Tensor ToyModel::forward_range(std::size_t lo, std::size_t hi,
                               const Tensor& batch) const {
  if (lo > hi || hi > blocks_.size()) {
    throw InvalidArgument("block range out of bounds");
  }
  if (lo == hi) {
    return batch;
  }
  const std::uint32_t width = blocks_[lo].in;
  if (batch.shape().size() != 2 || batch.shape()[1] != width) {
    throw InvalidArgument("activation width does not match block " +
                          std::to_string(lo) + " input (" +
                          std::to_string(width) + ")");
  }
  const std::size_t rows = batch.shape()[0];
  std::vector<float> cur(batch.data());
  std::vector<float> act;
  std::vector<float> acc;
  for (std::size_t k = lo; k < hi; ++k) {
    const Block& b = blocks_[k];
    act.resize(cur.size());
    if (b.activate_input) {
      std::transform(cur.begin(), cur.end(), act.begin(), gelu);
    } else {
      act = cur;
    }
    acc.resize(rows * b.out);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* x = act.data() + r * b.in;
      float* y = acc.data() + r * b.out;
      std::copy(b.bias.begin(), b.bias.end(), y);
      // Loop order keeps each output's sum in input-index order while
      // letting the inner loop run across outputs.
      for (std::uint32_t i = 0; i < b.in; ++i) {
        const float xi = x[i];
        const float* w = b.weight_by_input.data() +
                         static_cast<std::size_t>(i) * b.out;
        for (std::uint32_t j = 0; j < b.out; ++j) {
          y[j] += w[j] * xi;
        }
      }
      if (b.residual) {
        const float* skip = cur.data() + r * b.in;
        for (std::uint32_t j = 0; j < b.out; ++j) {
          y[j] = skip[j] + y[j];
        }
      }
    }
    cur.swap(acc);
  }
  const auto out_width = blocks_[hi - 1].out;
  return Tensor(std::move(cur),
                Shape{static_cast<std::uint32_t>(rows), out_width});
}

std::vector<Shard> partition_even(std::span<const double> block_costs,
                                  std::size_t n_stages) {
  const std::size_t n = block_costs.size();
  if (n_stages == 0) {
    throw InvalidArgument("need at least one stage");
  }
  if (n_stages > n) {
    throw InvalidArgument("more stages (" + std::to_string(n_stages) +
                          ") than blocks (" + std::to_string(n) + ")");
  }
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    prefix[i + 1] = prefix[i] + block_costs[i];
  }
  const double inf = std::numeric_limits<double>::infinity();
  // tail[s][i]: minimal bottleneck placing blocks [i, n) on s stages.
  std::vector<std::vector<double>> tail(n_stages + 1,
                                        std::vector<double>(n + 1, inf));
  tail[0][n] = 0.0;
  for (std::size_t s = 1; s <= n_stages; ++s) {
    for (std::size_t i = 0; i + s <= n; ++i) {
      for (std::size_t j = i + 1; j + (s - 1) <= n; ++j) {
        tail[s][i] = std::min(tail[s][i],
                              std::max(prefix[j] - prefix[i], tail[s - 1][j]));
      }
    }
  }
  // Walk forward taking the earliest cut that still reaches the optimum, so
  // ties resolve to the lexicographically smallest cut vector.
  const double target = tail[n_stages][0];
  std::vector<Shard> shards(n_stages);
  std::size_t lo = 0;
  for (std::size_t s = n_stages; s >= 1; --s) {
    std::size_t hi = n;
    if (s > 1) {
      hi = lo + 1;
      while (std::max(prefix[hi] - prefix[lo], tail[s - 1][hi]) > target) {
        ++hi;
      }
    }
    shards[n_stages - s] = Shard{static_cast<int>(n_stages - s), lo, hi};
    lo = hi;
  }
  return shards;
}

Tensor forward_shard(const ToyModel& model, const Shard& shard,
                     const Tensor& activation) {
  return model.forward_range(shard.lo, shard.hi, activation);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.shape().size() != 2) {
    throw InvalidArgument("argmax_rows expects a 2-D tensor");
  }
  const std::size_t rows = logits.shape()[0];
  const std::size_t cols = logits.shape()[1];
  std::vector<int> out(rows);
  const auto v = logits.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = v.subspan(r * cols, cols);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) -
                              row.begin());
  }
  return out;
}

std::vector<Microbatch> make_dataset(const DatasetConfig& cfg,
                                     const ModelDims& dims) {
  if (cfg.microbatch_size == 0 || cfg.microbatches == 0) {
    throw InvalidArgument("dataset needs at least one non-empty microbatch");
  }
  if (!(cfg.contrast_min > 0.0 && cfg.contrast_max >= cfg.contrast_min)) {
    throw InvalidArgument("contrast range must satisfy 0 < min <= max");
  }
  Xorshift64Star rng(cfg.seed);
  std::vector<double> centers(static_cast<std::size_t>(dims.n_classes) *
                              dims.input_dim);
  for (auto& c : centers) {
    c = cfg.center_scale * rng.normal();
  }
  const double log_lo = std::log(cfg.contrast_min);
  const double log_hi = std::log(cfg.contrast_max);

  std::vector<Microbatch> out;
  out.reserve(cfg.microbatches);
  for (std::size_t m = 0; m < cfg.microbatches; ++m) {
    Microbatch mb;
    mb.id = m;
    std::vector<float> data(static_cast<std::size_t>(cfg.microbatch_size) *
                            dims.input_dim);
    mb.labels.resize(cfg.microbatch_size);
    for (std::uint32_t r = 0; r < cfg.microbatch_size; ++r) {
      const auto label = static_cast<int>(rng.next() % dims.n_classes);
      mb.labels[r] = label;
      const double contrast = std::exp(log_lo + (log_hi - log_lo) * rng.uniform());
      const double* center =
          centers.data() + static_cast<std::size_t>(label) * dims.input_dim;
      for (std::uint32_t i = 0; i < dims.input_dim; ++i) {
        data[static_cast<std::size_t>(r) * dims.input_dim + i] =
            static_cast<float>((center[i] + rng.normal()) * contrast);
      }
    }
    mb.inputs = Tensor(std::move(data), Shape{cfg.microbatch_size, dims.input_dim});
    out.push_back(std::move(mb));
  }
  return out;
}

}  // namespace qpipe::model
