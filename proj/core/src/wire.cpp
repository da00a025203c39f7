// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "qpipe/wire.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

namespace qpipe::wire {

namespace {

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  void bytes(std::span<const std::uint8_t> b) {
    out_.insert(out_.end(), b.begin(), b.end());
  }
  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n) {
      throw WireError(WireErrc::kShortRead, "short read");
    }
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T uint() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> encode_payload(const quant::QuantizedTensor& t) {
  if (t.bitwidth != 32) {
    return quant::pack_codes(t.codes, t.bitwidth);
  }
  std::vector<std::uint8_t> out;
  out.reserve(t.codes.size() * 4);
  Writer w(out);
  for (auto c : t.codes) {
    w.uint(c);
  }
  return out;
}

}  // namespace

std::size_t payload_size(std::size_t elements, int bitwidth) {
  return quant::packed_size(elements, bitwidth);
}

std::size_t frame_size(std::size_t ndim, std::size_t elements, int bitwidth) {
  return kFixedHeaderSize + 4 * ndim + payload_size(elements, bitwidth);
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(
        bytes.size() - pos, std::numeric_limits<uInt>::max()));
    crc = ::crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_frame(std::uint16_t stage_id,
                                       std::uint64_t microbatch_id,
                                       const quant::QuantizedTensor& t) {
  if (!quant::is_supported_bitwidth(t.bitwidth)) {
    throw InvalidArgument("unsupported bitwidth " + std::to_string(t.bitwidth));
  }
  if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw InvalidArgument("too many dimensions for a frame");
  }
  if (element_count(t.shape) != t.codes.size()) {
    throw InvalidArgument("frame shape describes " +
                          std::to_string(element_count(t.shape)) +
                          " elements but tensor holds " +
                          std::to_string(t.codes.size()) + " codes");
  }
  const std::vector<std::uint8_t> payload = encode_payload(t);
  if (payload.size() != payload_size(t.codes.size(), t.bitwidth) ||
      payload.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw InvalidArgument("payload length inconsistent with shape");
  }

  std::vector<std::uint8_t> out;
  out.reserve(frame_size(t.shape.size(), t.codes.size(), t.bitwidth));
  Writer w(out);
  w.bytes(kMagic);
  w.uint(kVersion);
  w.uint(stage_id);
  w.uint(microbatch_id);
  w.uint(static_cast<std::uint8_t>(t.bitwidth));
  w.uint(static_cast<std::uint8_t>(t.shape.size()));
  for (auto extent : t.shape) {
    w.uint(extent);
  }
  w.f32(t.offset);
  w.f32(t.step);
  w.f32(t.clip ? t.clip->alpha : 0.0f);
  w.f32(t.clip ? t.clip->center : 0.0f);
  w.uint(static_cast<std::uint32_t>(payload.size()));
  w.uint(crc32(payload));
  w.bytes(payload);
  return out;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw WireError(WireErrc::kNotAFrame, "not a frame");
  }
  if (r.uint<std::uint8_t>() != kVersion) {
    throw WireError(WireErrc::kUnsupportedVersion, "unsupported frame version");
  }

  Frame f;
  FrameHeader& h = f.header;
  h.stage_id = r.uint<std::uint16_t>();
  h.microbatch_id = r.uint<std::uint64_t>();
  h.bitwidth = r.uint<std::uint8_t>();
  if (!quant::is_supported_bitwidth(h.bitwidth)) {
    throw WireError(WireErrc::kMalformed,
                    "unsupported bitwidth " + std::to_string(h.bitwidth));
  }
  const auto ndim = r.uint<std::uint8_t>();
  h.shape.reserve(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    const auto extent = r.uint<std::uint32_t>();
    if (extent == 0) {
      throw WireError(WireErrc::kMalformed, "zero extent in frame shape");
    }
    h.shape.push_back(extent);
  }
  h.offset = r.f32();
  h.step = r.f32();
  h.clip_alpha = r.f32();
  h.clip_center = r.f32();
  h.payload_len = r.uint<std::uint32_t>();
  h.crc32 = r.uint<std::uint32_t>();

  const std::size_t elements = element_count(h.shape);
  if (h.payload_len != payload_size(elements, h.bitwidth)) {
    throw WireError(WireErrc::kMalformed,
                    "payload length inconsistent with shape and bitwidth");
  }
  const auto payload = r.bytes(h.payload_len);
  if (r.remaining() != 0) {
    throw WireError(WireErrc::kMalformed, "trailing bytes after frame");
  }
  if (crc32(payload) != h.crc32) {
    throw WireError(WireErrc::kCorruptPayload, "corrupt payload");
  }

  quant::QuantizedTensor& t = f.tensor;
  t.bitwidth = h.bitwidth;
  t.shape = h.shape;
  t.offset = h.offset;
  t.step = h.step;
  if (h.clip_alpha != 0.0f || h.clip_center != 0.0f) {
    t.clip = quant::ClipSpec{h.clip_alpha, h.clip_center};
  }
  if (h.bitwidth == 32) {
    Reader pr(payload);
    t.codes.resize(elements);
    for (auto& c : t.codes) {
      c = pr.uint<std::uint32_t>();
    }
  } else {
    t.codes = quant::unpack_codes(payload, h.bitwidth, elements);
  }
  return f;
}

void write_message(std::ostream& out, std::span<const std::uint8_t> frame) {
  if (frame.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw InvalidArgument("message too large for a u32 length prefix");
  }
  std::vector<std::uint8_t> prefix;
  Writer(prefix).uint(static_cast<std::uint32_t>(frame.size()));
  out.write(reinterpret_cast<const char*>(prefix.data()), 4);
  out.write(reinterpret_cast<const char*>(frame.data()),
            static_cast<std::streamsize>(frame.size()));
}

std::optional<std::vector<std::uint8_t>> read_message(std::istream& in) {
  std::uint8_t prefix[4];
  in.read(reinterpret_cast<char*>(prefix), 4);
  if (in.gcount() == 0) {
    return std::nullopt;
  }
  if (in.gcount() != 4) {
    throw WireError(WireErrc::kShortRead, "short read");
  }
  const auto len = Reader(prefix).uint<std::uint32_t>();
  std::vector<std::uint8_t> msg(len);
  in.read(reinterpret_cast<char*>(msg.data()), len);
  if (static_cast<std::size_t>(in.gcount()) != len) {
    throw WireError(WireErrc::kShortRead, "short read");
  }
  return msg;
}

}  // namespace qpipe::wire
