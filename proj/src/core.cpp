#include "awima/core.hpp"

#include "awima/bytes.hpp"

#include <charconv>
#include <cstdio>

namespace awima {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EncodeError: return "EncodeError";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::AuthFailure: return "AuthFailure";
    case ErrorCode::WrongSealType: return "WrongSealType";
    case ErrorCode::NoPath: return "NoPath";
    case ErrorCode::CertInvalid: return "CertInvalid";
    case ErrorCode::Reject: return "Reject";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::MissingSession: return "MissingSession";
    case ErrorCode::SelfSession: return "SelfSession";
    case ErrorCode::TunnelExists: return "TunnelExists";
    case ErrorCode::AddressExhausted: return "AddressExhausted";
    case ErrorCode::AddressViolation: return "AddressViolation";
    case ErrorCode::NatExhausted: return "NatExhausted";
    case ErrorCode::NoMapping: return "NoMapping";
    case ErrorCode::NoProvider: return "NoProvider";
    case ErrorCode::Rejected: return "Rejected";
    case ErrorCode::RangeError: return "RangeError";
    case ErrorCode::PolicyError: return "PolicyError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::Insufficient: return "Insufficient";
    case ErrorCode::TargetInvalid: return "TargetInvalid";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

std::string to_string(NodeId id) {
  const char* prefix = "?";
  switch (id.role) {
    case Role::Client: prefix = "C"; break;
    case Role::ServiceProvider: prefix = "SP"; break;
    case Role::Server: prefix = "S"; break;
    case Role::InternetHost: prefix = "H"; break;
  }
  return prefix + std::to_string(id.index);
}

std::optional<NodeId> parse_node_id(std::string_view text) {
  NodeId id;
  std::size_t skip = 1;
  if (text.starts_with("SP")) {
    id.role = Role::ServiceProvider;
    skip = 2;
  } else if (text.starts_with("C")) {
    id.role = Role::Client;
  } else if (text.starts_with("S")) {
    id.role = Role::Server;
  } else if (text.starts_with("H")) {
    id.role = Role::InternetHost;
  } else {
    return std::nullopt;
  }
  auto digits = text.substr(skip);
  if (digits.empty()) return std::nullopt;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id.index);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return std::nullopt;
  return id;
}

std::optional<AddressKind> classify(std::uint32_t v) noexcept {
  using namespace addr_plan;
  if (v >= kClientVpnBase && v <= kClientVpnLast) return AddressKind::ClientVpn;
  if (v >= kAdhocBase && v <= kAdhocLast) return AddressKind::AdhocDhcp;
  if (v >= kSpPublicBase && v <= kSpPublicLast) return AddressKind::SpPublic;
  if (v == kServerPublic) return AddressKind::ServerPublic;
  if (v >= kInternetBase && v <= kInternetLast) return AddressKind::Internet;
  return std::nullopt;
}

Address make_address(AddressKind kind, std::uint32_t value, std::uint16_t port) {
  if (classify(value) != kind) {
    throw Error(ErrorCode::AddressViolation,
                std::string("value outside ") + to_string(kind) + " range");
  }
  return Address{kind, value, port};
}

Address server_address(std::uint16_t port) {
  return Address{AddressKind::ServerPublic, addr_plan::kServerPublic, port};
}

const char* to_string(AddressKind kind) noexcept {
  switch (kind) {
    case AddressKind::ClientVpn: return "ClientVpn";
    case AddressKind::AdhocDhcp: return "AdhocDhcp";
    case AddressKind::SpPublic: return "SpPublic";
    case AddressKind::ServerPublic: return "ServerPublic";
    case AddressKind::Internet: return "Internet";
  }
  return "?";
}

std::string to_string(const Address& a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%u.%u.%u.%u:%u", (a.value >> 24) & 0xFF, (a.value >> 16) & 0xFF,
                (a.value >> 8) & 0xFF, a.value & 0xFF, static_cast<unsigned>(a.port));
  return buf;
}

std::string to_string(const FlowId& f) { return to_string(f.client) + "/" + std::to_string(f.index); }

namespace {

bool valid_inner_addressing(const InnerPacket& p) {
  if (classify(p.src.value) != p.src.kind || classify(p.dst.value) != p.dst.kind) return false;
  // Uplink: vpn -> internet. Downlink: internet -> vpn.
  const bool up = p.src.kind == AddressKind::ClientVpn && p.dst.kind == AddressKind::Internet;
  const bool down = p.src.kind == AddressKind::Internet && p.dst.kind == AddressKind::ClientVpn;
  return up || down;
}

}  // namespace

Bytes encode_inner(const InnerPacket& p, std::size_t mtu) {
  if (p.payload.size() > mtu) throw Error(ErrorCode::EncodeError, "payload exceeds MTU");
  if (!valid_inner_addressing(p)) throw Error(ErrorCode::EncodeError, "inner addresses malformed");
  ByteWriter w;
  w.address(p.src);
  w.address(p.dst);
  w.flow(p.flow);
  w.u64(p.seq);
  w.u8(static_cast<std::uint8_t>(p.reliability));
  w.blob16(p.payload);
  return std::move(w).take();
}

InnerPacket decode_inner(ByteView bytes, std::size_t mtu) {
  ByteReader r(bytes);
  InnerPacket p;
  p.src = r.address();
  p.dst = r.address();
  p.flow = r.flow();
  p.seq = r.u64();
  const auto rel = r.u8();
  if (rel > 1) throw Error(ErrorCode::DecodeError, "bad reliability tag");
  p.reliability = static_cast<Reliability>(rel);
  p.payload = r.blob16();
  r.expect_done();
  if (p.payload.size() > mtu) throw Error(ErrorCode::DecodeError, "payload exceeds MTU");
  if (!valid_inner_addressing(p)) throw Error(ErrorCode::DecodeError, "inner addresses malformed");
  return p;
}

std::string to_hex(ByteView bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

std::uint64_t SeededRng::next_u64() { return engine_(); }

double SeededRng::uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t SeededRng::below(std::uint64_t bound) {
  // Rejection sampling keeps the draw unbiased and implementation-independent.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % bound;
}

void SeededRng::fill(std::span<std::uint8_t> out) {
  std::size_t i = 0;
  while (i < out.size()) {
    auto v = next_u64();
    for (int b = 0; b < 8 && i < out.size(); ++b, ++i) {
      out[i] = static_cast<std::uint8_t>(v >> (8 * b));
    }
  }
}

SeededRng SeededRng::split(NodeId id) const {
  const std::uint64_t tag = (static_cast<std::uint64_t>(id.role) << 32) | id.index;
  return SeededRng(mix64(seed_ ^ mix64(tag + 0x51ED270B2F1A3C4DULL)));
}

// ---- ByteWriter / ByteReader ----

void ByteWriter::blob16(ByteView b) {
  if (b.size() > 0xFFFF) throw Error(ErrorCode::EncodeError, "blob too long for 16-bit length");
  u16(static_cast<std::uint16_t>(b.size()));
  raw(b);
}

void ByteWriter::blob32(ByteView b) {
  u32(static_cast<std::uint32_t>(b.size()));
  raw(b);
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) throw Error(ErrorCode::DecodeError, "truncated input");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return in_[pos_++];
}

std::uint16_t ByteReader::u16() {
  need(2);
  std::uint16_t v = static_cast<std::uint16_t>((in_[pos_] << 8) | in_[pos_ + 1]);
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | in_[pos_++];
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | in_[pos_++];
  return v;
}

ByteView ByteReader::raw(std::size_t n) {
  need(n);
  auto v = in_.subspan(pos_, n);
  pos_ += n;
  return v;
}

Bytes ByteReader::blob16() {
  auto n = u16();
  auto v = raw(n);
  return Bytes(v.begin(), v.end());
}

Bytes ByteReader::blob32() {
  auto n = u32();
  auto v = raw(n);
  return Bytes(v.begin(), v.end());
}

NodeId ByteReader::node() {
  const auto role = u8();
  if (role > 3) throw Error(ErrorCode::DecodeError, "bad role tag");
  NodeId id{static_cast<Role>(role), 0};
  id.index = u32();
  return id;
}

Address ByteReader::address() {
  const auto kind = u8();
  if (kind > 4) throw Error(ErrorCode::DecodeError, "bad address kind");
  Address a;
  a.kind = static_cast<AddressKind>(kind);
  a.value = u32();
  a.port = u16();
  return a;
}

FlowId ByteReader::flow() {
  FlowId f;
  f.client = node();
  f.index = u32();
  return f;
}

void ByteReader::expect_done() const {
  if (!done()) throw Error(ErrorCode::DecodeError, "trailing bytes");
}

}  // namespace awima
