#pragma once

// Systematic Reed-Solomon style erasure code over GF(256) and the per-flow
// group encoder/decoder used at tunnel endpoints.

#include "awima/core.hpp"
#include "awima/tunnel.hpp"

#include <map>
#include <optional>
#include <set>

namespace awima {

namespace gf256 {
/// Reduction polynomial x^8 + x^4 + x^3 + x^2 + 1.
inline constexpr unsigned kPoly = 0x11D;

std::uint8_t mul(std::uint8_t a, std::uint8_t b) noexcept;
std::uint8_t div(std::uint8_t a, std::uint8_t b);  // RangeError on b == 0
std::uint8_t inv(std::uint8_t a);
std::uint8_t pow(std::uint8_t a, unsigned e) noexcept;
}  // namespace gf256

struct CodingConfig {
  unsigned k = 4;
  unsigned n = 6;

  /// ConfigError unless 1 <= k <= n <= 255.
  void validate() const;
};

struct Shard {
  std::uint8_t index = 0;
  Bytes data;
  bool parity = false;

  bool operator==(const Shard&) const = default;
};

struct CodedGroup {
  std::uint64_t groupId = 0;
  std::vector<Shard> shards;
  std::vector<std::size_t> originalLengths;
};

/// Row i of the systematic generator: unit rows for i < k, parity rows after.
std::vector<std::uint8_t> generator_row(const CodingConfig& cfg, unsigned i);

/// Exactly k packets in. Shards are padded to the longest packet.
CodedGroup encode_group(const CodingConfig& cfg, std::uint64_t groupId, const std::vector<Bytes>& packets);

/// Reconstructs the k originals from any k distinct shards; Insufficient
/// otherwise. originalLengths strips the padding.
std::vector<Bytes> decode_group(const CodingConfig& cfg, const std::vector<Shard>& received,
                                const std::vector<std::size_t>& originalLengths);

/// Self-delimiting shard symbol for a packet: 16-bit length then the bytes.
Bytes frame_symbol(ByteView packet);
/// Inverse of frame_symbol, ignoring trailing zero padding.
Bytes unframe_symbol(ByteView symbol);

inline constexpr SimTime kGroupFlushTimeout = 100 * kMillis;

/// Groups consecutive packets of one flow and emits shard frames.
class GroupEncoder {
 public:
  GroupEncoder(CodingConfig cfg, FlowId flow);

  /// Adds an encoded InnerPacket; returns the n shards once k are buffered.
  std::vector<ShardFrame> add(Bytes encodedInner, SimTime now);
  /// Emits a short group (k' data, k' + n - k total) from what is buffered.
  std::vector<ShardFrame> flush();
  std::optional<SimTime> pending_since() const noexcept { return since_; }
  std::size_t buffered() const noexcept { return pending_.size(); }
  std::uint64_t groups_emitted() const noexcept { return next_group_; }

 private:
  std::vector<ShardFrame> emit();

  CodingConfig cfg_;
  FlowId flow_;
  std::vector<Bytes> pending_;
  std::optional<SimTime> since_;
  std::uint64_t next_group_ = 0;
};

class GroupDecoder {
 public:
  struct Output {
    std::vector<Bytes> packets;  // encoded InnerPackets now available
    bool recovered = false;      // true when parity filled a gap
    std::uint64_t group = 0;
  };

  Output push(const ShardFrame& s);

  struct Failure {
    std::uint64_t group = 0;
    unsigned missing = 0;
    unsigned received = 0;
    unsigned k = 0;
  };
  /// Groups that still lack some systematic shard and cannot be decoded.
  std::vector<Failure> failures() const;

 private:
  struct State {
    unsigned k = 0;
    unsigned n = 0;
    std::map<std::uint8_t, Bytes> shards;
    std::set<std::uint8_t> delivered;
    bool complete = false;
  };
  std::map<std::uint64_t, State> groups_;
};

}  // namespace awima
