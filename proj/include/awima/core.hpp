#pragma once

// Shared identifiers, addresses, packets and their canonical byte encodings.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace awima {

using Bytes = std::vector<std::uint8_t>;
/// Simulated time in integer microseconds.
using SimTime = std::int64_t;

inline constexpr SimTime kMicros = 1;
inline constexpr SimTime kMillis = 1000;
inline constexpr SimTime kSeconds = 1'000'000;

inline constexpr SimTime from_seconds(double s) { return static_cast<SimTime>(s * 1e6 + (s >= 0 ? 0.5 : -0.5)); }
inline constexpr double to_seconds(SimTime t) { return static_cast<double>(t) / 1e6; }
using ByteView = std::span<const std::uint8_t>;

enum class ErrorCode {
  EncodeError,
  DecodeError,
  AuthFailure,
  WrongSealType,
  NoPath,
  CertInvalid,
  Reject,
  ProtocolViolation,
  MissingSession,
  SelfSession,
  TunnelExists,
  AddressExhausted,
  AddressViolation,
  NatExhausted,
  NoMapping,
  NoProvider,
  Rejected,
  RangeError,
  PolicyError,
  ConfigError,
  Insufficient,
  TargetInvalid,
  ValidationError,
  InvariantViolation,
  IoError,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

enum class Role : std::uint8_t { Client = 0, ServiceProvider = 1, Server = 2, InternetHost = 3 };

struct NodeId {
  Role role = Role::Client;
  std::uint32_t index = 0;

  auto operator<=>(const NodeId&) const = default;
};

std::string to_string(NodeId id);
std::optional<NodeId> parse_node_id(std::string_view text);

inline NodeId client_id(std::uint32_t i) { return {Role::Client, i}; }
inline NodeId sp_id(std::uint32_t i) { return {Role::ServiceProvider, i}; }
inline NodeId server_id() { return {Role::Server, 0}; }
inline NodeId host_id(std::uint32_t i = 0) { return {Role::InternetHost, i}; }

enum class AddressKind : std::uint8_t { ClientVpn = 0, AdhocDhcp = 1, SpPublic = 2, ServerPublic = 3, Internet = 4 };

// Simulation-internal numbering plan. Kinds occupy disjoint ranges so a raw
// value is enough to recover the kind.
namespace addr_plan {
inline constexpr std::uint32_t kClientVpnBase = 0x0A400000;
inline constexpr std::uint32_t kClientVpnLast = 0x0A40FFFF;
inline constexpr std::uint32_t kAdhocBase = 0x0A000000;
inline constexpr std::uint32_t kAdhocLast = 0x0A00FFFF;
inline constexpr std::uint32_t kSpPublicBase = 0xCB007100;
inline constexpr std::uint32_t kSpPublicLast = 0xCB0071FF;
inline constexpr std::uint32_t kServerPublic = 0xCB007201;
inline constexpr std::uint32_t kInternetBase = 0x5B000000;
inline constexpr std::uint32_t kInternetLast = 0x5BFFFFFF;
}  // namespace addr_plan

struct Address {
  AddressKind kind = AddressKind::Internet;
  std::uint32_t value = 0;
  std::uint16_t port = 0;  // 0 = unassigned

  auto operator<=>(const Address&) const = default;
};

std::optional<AddressKind> classify(std::uint32_t value) noexcept;
/// Builds an address, rejecting values outside the kind's range.
Address make_address(AddressKind kind, std::uint32_t value, std::uint16_t port = 0);
Address server_address(std::uint16_t port = 0);
std::string to_string(const Address& a);
const char* to_string(AddressKind kind) noexcept;

struct FlowId {
  NodeId client;
  std::uint32_t index = 0;

  auto operator<=>(const FlowId&) const = default;
};

std::string to_string(const FlowId& f);

enum class Reliability : std::uint8_t { Reliable = 0, Unreliable = 1 };

inline constexpr std::size_t kDefaultMtu = 1400;

struct InnerPacket {
  Address src;
  Address dst;
  FlowId flow;
  std::uint64_t seq = 0;
  Bytes payload;
  Reliability reliability = Reliability::Reliable;

  bool operator==(const InnerPacket&) const = default;
};

struct QosPromise {
  double avgBandwidth = 0;  // bytes/sec
  double duration = 0;      // seconds
  double cost = 0;          // currency units/sec

  bool valid() const noexcept { return avgBandwidth > 0 && duration > 0 && cost > 0; }
};

// src(7) dst(7) flow(9) seq(8) reliability(1) payload length(2)
inline constexpr std::size_t kInnerHeaderSize = 34;

Bytes encode_inner(const InnerPacket& p, std::size_t mtu = kDefaultMtu);
InnerPacket decode_inner(ByteView bytes, std::size_t mtu = kDefaultMtu);

std::string to_hex(ByteView bytes);

/// Deterministic 64-bit generator. Draws are defined in terms of the raw
/// mt19937_64 stream so results match across standard libraries.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform01();  // [0, 1)
  /// Uniform in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  void fill(std::span<std::uint8_t> out);

  /// Independent stream for a node: seed mixed with a hash of the id.
  SeededRng split(NodeId id) const;
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace awima
