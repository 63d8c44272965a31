#include "awima/crypto.hpp"

#include "awima/bytes.hpp"

#include <sodium.h>

#include <cstring>

namespace awima {

namespace {

static_assert(crypto_shorthash_KEYBYTES == 16);
static_assert(crypto_shorthash_BYTES == 8);

Tag keyed_hash(const KeyMaterial& key, ByteView msg) {
  Tag out{};
  crypto_shorthash(out.data(), msg.data(), msg.size(), key.data());
  return out;
}

void apply_keystream(const KeyMaterial& key, std::uint64_t keyRef, std::uint64_t nonce,
                     std::span<std::uint8_t> data) {
  for (std::size_t block = 0; block * 8 < data.size(); ++block) {
    ByteWriter w;
    w.u64(keyRef);
    w.u64(nonce);
    w.u64(block);
    const Tag ks = keyed_hash(key, w.bytes());
    for (std::size_t i = 0; i < 8 && block * 8 + i < data.size(); ++i) data[block * 8 + i] ^= ks[i];
  }
}

Tag envelope_tag(const KeyMaterial& key, SealType type, std::uint64_t keyRef, std::uint64_t nonce,
                 ByteView sealed) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(type));
  w.u64(keyRef);
  w.u64(nonce);
  w.raw(sealed);
  return keyed_hash(key, w.bytes());
}

Envelope seal_with(const KeyMaterial& key, SealType type, std::uint64_t keyRef, std::uint64_t nonce,
                   ByteView plain) {
  Envelope e;
  e.sealType = type;
  e.keyRef = keyRef;
  e.nonce = nonce;
  e.sealedBytes.assign(plain.begin(), plain.end());
  apply_keystream(key, keyRef, nonce, e.sealedBytes);
  e.authTag = envelope_tag(key, type, keyRef, nonce, e.sealedBytes);
  return e;
}

Bytes open_with(const KeyMaterial& key, const Envelope& e) {
  const Tag expect = envelope_tag(key, e.sealType, e.keyRef, e.nonce, e.sealedBytes);
  if (sodium_memcmp(expect.data(), e.authTag.data(), expect.size()) != 0) {
    throw Error(ErrorCode::AuthFailure, "authentication tag mismatch");
  }
  Bytes plain = e.sealedBytes;
  apply_keystream(key, e.keyRef, e.nonce, plain);
  return plain;
}

Tag certificate_signature(const KeyMaterial& root, const Certificate& c) {
  ByteWriter w;
  w.node(c.subject);
  w.u64(c.subjectPublicId);
  w.u8(static_cast<std::uint8_t>(c.issuer));
  return keyed_hash(root, w.bytes());
}

void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw Error(ErrorCode::ConfigError, "libsodium failed to initialize");
}

}  // namespace

KeyRegistry::KeyRegistry(std::uint64_t seed) {
  ensure_sodium();
  SeededRng root_rng(mix64(seed ^ 0x7457A11ED0C0FFEEULL));
  root_rng.fill(root_);
}

SymmetricKey KeyRegistry::keygen(SeededRng& rng) {
  SymmetricKey k;
  k.keyId = next_id_++;
  rng.fill(k.material);
  return k;
}

KeyPair KeyRegistry::keypair(SeededRng& rng) {
  KeyPair kp;
  kp.publicId = next_id_++;
  kp.privateId = next_id_++;
  PairSecret secret{kp.privateId, {}};
  rng.fill(secret.material);
  pairs_.emplace(kp.publicId, secret);
  return kp;
}

Envelope KeyRegistry::seal(const SymmetricKey& k, ByteView plain) {
  return seal_with(k.material, SealType::Sym, k.keyId, next_nonce_++, plain);
}

Envelope KeyRegistry::asym_seal(std::uint64_t publicId, ByteView plain) {
  auto it = pairs_.find(publicId);
  if (it == pairs_.end()) throw Error(ErrorCode::AuthFailure, "unregistered public key");
  return seal_with(it->second.material, SealType::Asym, publicId, next_nonce_++, plain);
}

Bytes KeyRegistry::asym_open(std::uint64_t privateId, const Envelope& e) const {
  if (e.sealType != SealType::Asym) throw Error(ErrorCode::WrongSealType, "expected asymmetric envelope");
  auto it = pairs_.find(e.keyRef);
  if (it == pairs_.end() || it->second.privateId != privateId) {
    throw Error(ErrorCode::AuthFailure, "private key does not pair with envelope key");
  }
  return open_with(it->second.material, e);
}

Certificate KeyRegistry::issue_certificate(NodeId subject, std::uint64_t subjectPublicId) const {
  Certificate c;
  c.subject = subject;
  c.subjectPublicId = subjectPublicId;
  c.issuer = Issuer::TrustRoot;
  c.signature = certificate_signature(root_, c);
  return c;
}

bool KeyRegistry::validate_certificate(const Certificate& c) const {
  if (c.issuer != Issuer::TrustRoot) return false;
  const Tag expect = certificate_signature(root_, c);
  return sodium_memcmp(expect.data(), c.signature.data(), expect.size()) == 0;
}

Bytes open(const SymmetricKey& k, const Envelope& e) {
  if (e.sealType != SealType::Sym) throw Error(ErrorCode::WrongSealType, "expected symmetric envelope");
  if (e.keyRef != k.keyId) throw Error(ErrorCode::AuthFailure, "key does not match envelope");
  return open_with(k.material, e);
}

void encode_envelope(ByteWriter& w, const Envelope& e) {
  w.u8(static_cast<std::uint8_t>(e.sealType));
  w.u64(e.keyRef);
  w.u64(e.nonce);
  w.blob32(e.sealedBytes);
  w.raw(e.authTag);
}

Envelope decode_envelope(ByteReader& r) {
  Envelope e;
  const auto type = r.u8();
  if (type > 1) throw Error(ErrorCode::DecodeError, "bad seal type");
  e.sealType = static_cast<SealType>(type);
  e.keyRef = r.u64();
  e.nonce = r.u64();
  e.sealedBytes = r.blob32();
  auto tag = r.raw(8);
  std::memcpy(e.authTag.data(), tag.data(), 8);
  return e;
}

void encode_certificate(ByteWriter& w, const Certificate& c) {
  w.node(c.subject);
  w.u64(c.subjectPublicId);
  w.u8(static_cast<std::uint8_t>(c.issuer));
  w.raw(c.signature);
}

Certificate decode_certificate(ByteReader& r) {
  Certificate c;
  c.subject = r.node();
  c.subjectPublicId = r.u64();
  const auto issuer = r.u8();
  if (issuer != 0) throw Error(ErrorCode::DecodeError, "unknown issuer");
  c.issuer = Issuer::TrustRoot;
  auto sig = r.raw(8);
  std::memcpy(c.signature.data(), sig.data(), 8);
  return c;
}

void encode_key(ByteWriter& w, const SymmetricKey& k) {
  w.u64(k.keyId);
  w.raw(k.material);
}

SymmetricKey decode_key(ByteReader& r) {
  SymmetricKey k;
  k.keyId = r.u64();
  auto m = r.raw(16);
  std::memcpy(k.material.data(), m.data(), 16);
  return k;
}

std::uint64_t digest64(ByteView bytes) {
  static constexpr KeyMaterial kPublic{'a', 'w', 'i', 'm', 'a', '-', 't', 'r',
                                       'a', 'n', 's', 'c', 'r', 'i', 'p', 't'};
  ensure_sodium();
  const Tag t = keyed_hash(kPublic, bytes);
  std::uint64_t v = 0;
  for (auto b : t) v = (v << 8) | b;
  return v;
}

}  // namespace awima
