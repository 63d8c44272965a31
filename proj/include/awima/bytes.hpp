#pragma once

// Big-endian field writer/reader used by every canonical encoding.

#include "awima/core.hpp"

#include <cstring>

namespace awima {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v >> 8));
    u8(static_cast<std::uint8_t>(v));
  }
  void u32(std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) u8(static_cast<std::uint8_t>(v >> s));
  }
  void u64(std::uint64_t v) {
    for (int s = 56; s >= 0; s -= 8) u8(static_cast<std::uint8_t>(v >> s));
  }
  void raw(ByteView b) { out_.insert(out_.end(), b.begin(), b.end()); }
  /// 16-bit length prefix followed by the bytes.
  void blob16(ByteView b);
  /// 32-bit length prefix followed by the bytes.
  void blob32(ByteView b);
  void node(NodeId id) {
    u8(static_cast<std::uint8_t>(id.role));
    u32(id.index);
  }
  void address(const Address& a) {
    u8(static_cast<std::uint8_t>(a.kind));
    u32(a.value);
    u16(a.port);
  }
  void flow(const FlowId& f) {
    node(f.client);
    u32(f.index);
  }

  const Bytes& bytes() const& { return out_; }
  Bytes take() && { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  Bytes out_;
};

/// Throws Error(DecodeError) on any truncation or malformed enum value.
class ByteReader {
 public:
  explicit ByteReader(ByteView in) : in_(in) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  ByteView raw(std::size_t n);
  Bytes blob16();
  Bytes blob32();
  NodeId node();
  Address address();
  FlowId flow();

  std::size_t remaining() const { return in_.size() - pos_; }
  bool done() const { return pos_ == in_.size(); }
  /// Throws unless every byte was consumed.
  void expect_done() const;

 private:
  void need(std::size_t n) const;

  ByteView in_;
  std::size_t pos_ = 0;
};

}  // namespace awima
