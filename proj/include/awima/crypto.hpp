#pragma once

// Symbolic authenticated encryption and certificates.
//
// Nothing here is a real cipher. Sealing XORs the plaintext with a keyed
// keystream and appends a keyed tag, which is enough to make "who can read
// what" an enforceable, testable predicate: the only way back to plaintext is
// open()/asym_open() with the matching key.

#include "awima/bytes.hpp"
#include "awima/core.hpp"

#include <map>

namespace awima {

using KeyMaterial = std::array<std::uint8_t, 16>;
using Tag = std::array<std::uint8_t, 8>;

struct SymmetricKey {
  std::uint64_t keyId = 0;
  KeyMaterial material{};

  bool operator==(const SymmetricKey&) const = default;
};

struct KeyPair {
  std::uint64_t publicId = 0;
  std::uint64_t privateId = 0;
};

enum class SealType : std::uint8_t { Sym = 0, Asym = 1 };

struct Envelope {
  SealType sealType = SealType::Sym;
  std::uint64_t keyRef = 0;  // keyId for Sym, publicId for Asym
  std::uint64_t nonce = 0;
  Bytes sealedBytes;
  Tag authTag{};

  bool operator==(const Envelope&) const = default;
};

enum class Issuer : std::uint8_t { TrustRoot = 0 };

struct Certificate {
  NodeId subject;
  std::uint64_t subjectPublicId = 0;
  Issuer issuer = Issuer::TrustRoot;
  Tag signature{};

  bool operator==(const Certificate&) const = default;
};

/// Per-simulation key registry and trust root. Single writer (the event loop).
class KeyRegistry {
 public:
  explicit KeyRegistry(std::uint64_t seed);

  SymmetricKey keygen(SeededRng& rng);
  KeyPair keypair(SeededRng& rng);

  Envelope seal(const SymmetricKey& k, ByteView plain);
  Envelope asym_seal(std::uint64_t publicId, ByteView plain);
  /// Throws AuthFailure unless privateId pairs with e.keyRef; WrongSealType for Sym envelopes.
  Bytes asym_open(std::uint64_t privateId, const Envelope& e) const;

  Certificate issue_certificate(NodeId subject, std::uint64_t subjectPublicId) const;
  bool validate_certificate(const Certificate& c) const;

  std::uint64_t keys_issued() const noexcept { return next_id_ - 1; }

 private:
  struct PairSecret {
    std::uint64_t privateId;
    KeyMaterial material;
  };

  std::uint64_t next_id_ = 1;
  std::uint64_t next_nonce_ = 1;
  KeyMaterial root_{};
  std::map<std::uint64_t, PairSecret> pairs_;  // by publicId
};

/// Returns the plaintext iff k.keyId == e.keyRef and the tag verifies.
/// Throws AuthFailure otherwise, WrongSealType for Asym envelopes.
Bytes open(const SymmetricKey& k, const Envelope& e);

void encode_envelope(ByteWriter& w, const Envelope& e);
Envelope decode_envelope(ByteReader& r);
void encode_certificate(ByteWriter& w, const Certificate& c);
Certificate decode_certificate(ByteReader& r);
void encode_key(ByteWriter& w, const SymmetricKey& k);
SymmetricKey decode_key(ByteReader& r);

/// Unkeyed 64-bit digest (fixed public key) used for handshake transcripts.
std::uint64_t digest64(ByteView bytes);

}  // namespace awima
