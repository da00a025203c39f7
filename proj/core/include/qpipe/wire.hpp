// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "qpipe/error.hpp"
#include "qpipe/quant.hpp"

namespace qpipe::wire {

// Frame layout (all integers little-endian, floats IEEE-754 binary32 LE):
//
//   off  size  field
//     0     4  magic "QPIP"
//     4     1  version (1)
//     5     2  stage_id
//     7     8  microbatch_id
//    15     1  bitwidth
//    16     1  ndim
//    17  4*nd  shape extents (u32 each)
//     +     4  offset
//     +     4  step
//     +     4  clip_alpha  (0 when unclipped)
//     +     4  clip_center
//     +     4  payload_len
//     +     4  crc32 (IEEE) over the payload
//     +     n  payload: packed codes, or raw f32 when bitwidth == 32

inline constexpr std::uint8_t kMagic[4] = {'Q', 'P', 'I', 'P'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kFixedHeaderSize = 41;

struct FrameHeader {
  std::uint16_t stage_id = 0;
  std::uint64_t microbatch_id = 0;
  std::uint8_t bitwidth = 32;
  Shape shape;
  float offset = 0.0f;
  float step = 0.0f;
  float clip_alpha = 0.0f;
  float clip_center = 0.0f;
  std::uint32_t payload_len = 0;
  std::uint32_t crc32 = 0;

  friend bool operator==(const FrameHeader&, const FrameHeader&) = default;
};

struct Frame {
  FrameHeader header;
  quant::QuantizedTensor tensor;
};

enum class WireErrc {
  kNotAFrame,
  kUnsupportedVersion,
  kCorruptPayload,
  kShortRead,
  kMalformed,
};

class WireError : public Error {
 public:
  WireError(WireErrc code, const std::string& what) : Error(what), code_(code) {}
  WireErrc code() const { return code_; }

 private:
  WireErrc code_;
};

/// Payload bytes for `elements` values at `bitwidth`.
std::size_t payload_size(std::size_t elements, int bitwidth);

/// Total encoded size of a frame.
std::size_t frame_size(std::size_t ndim, std::size_t elements, int bitwidth);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Serializes `tensor` as a self-describing frame. Throws InvalidArgument
/// when the tensor is internally inconsistent.
std::vector<std::uint8_t> encode_frame(std::uint16_t stage_id,
                                       std::uint64_t microbatch_id,
                                       const quant::QuantizedTensor& tensor);

/// Parses and validates one complete frame. Throws WireError.
Frame decode_frame(std::span<const std::uint8_t> bytes);

// Stream transport: each message is a u32 little-endian length followed by
// exactly that many bytes (one frame).

void write_message(std::ostream& out, std::span<const std::uint8_t> frame);

/// Returns nullopt on a clean end of stream; throws WireError(kShortRead)
/// when the stream ends inside a message.
std::optional<std::vector<std::uint8_t>> read_message(std::istream& in);

}  // namespace qpipe::wire
