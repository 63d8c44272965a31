#include "awima/crypto.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace awima;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::IoError;
}

Bytes text(const char* s) { return Bytes(s, s + std::strlen(s)); }

}  // namespace

TEST(Keygen, IdsAreUnique) {
  KeyRegistry reg(1);
  SeededRng rng(1);
  std::set<std::uint64_t> ids;
  for (int i = 0; i < 10000; ++i) ids.insert(reg.keygen(rng).keyId);
  EXPECT_EQ(ids.size(), 10000u);
  const auto pair = reg.keypair(rng);
  EXPECT_NE(pair.publicId, pair.privateId);
  EXPECT_EQ(ids.count(pair.publicId) + ids.count(pair.privateId), 0u);
}

TEST(Keygen, SameSeedSameSequence) {
  KeyRegistry r1(5), r2(5);
  SeededRng g1(5), g2(5);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(r1.keygen(g1), r2.keygen(g2));
}

TEST(Seal, RoundTripAndWrongKey) {
  KeyRegistry reg(2);
  SeededRng rng(2);
  const auto k = reg.keygen(rng);
  const auto other = reg.keygen(rng);
  const Bytes msg = text("attack at dawn");
  const auto e = reg.seal(k, msg);
  EXPECT_EQ(e.sealType, SealType::Sym);
  EXPECT_EQ(e.keyRef, k.keyId);
  EXPECT_EQ(open(k, e), msg);
  EXPECT_NE(e.sealedBytes, msg);
  EXPECT_EQ(code_of([&] { open(other, e); }), ErrorCode::AuthFailure);

  const auto e2 = reg.seal(k, msg);
  EXPECT_EQ(open(k, e2), msg);
  EXPECT_NE(e.sealedBytes, e2.sealedBytes);
}

TEST(Seal, SameIdDifferentMaterialFails) {
  KeyRegistry reg(2);
  SeededRng rng(2);
  const auto k = reg.keygen(rng);
  auto forged = k;
  forged.material[0] ^= 1;
  EXPECT_EQ(code_of([&] { open(forged, reg.seal(k, text("x"))); }), ErrorCode::AuthFailure);
}

TEST(Seal, EveryTagBitFlipFails) {
  KeyRegistry reg(3);
  SeededRng rng(3);
  const auto k = reg.keygen(rng);
  const auto e = reg.seal(k, text("payload bytes"));
  for (std::size_t i = 0; i < e.authTag.size() * 8; ++i) {
    auto bad = e;
    bad.authTag[i / 8] ^= static_cast<std::uint8_t>(1u << (i % 8));
    EXPECT_EQ(code_of([&] { open(k, bad); }), ErrorCode::AuthFailure) << "bit " << i;
  }
  for (std::size_t i = 0; i < e.sealedBytes.size() * 8; ++i) {
    auto bad = e;
    bad.sealedBytes[i / 8] ^= static_cast<std::uint8_t>(1u << (i % 8));
    EXPECT_EQ(code_of([&] { open(k, bad); }), ErrorCode::AuthFailure);
  }
  auto bad = e;
  bad.nonce ^= 1;
  EXPECT_EQ(code_of([&] { open(k, bad); }), ErrorCode::AuthFailure);
}

TEST(Seal, AsymEnvelopeIsWrongSealType) {
  KeyRegistry reg(4);
  SeededRng rng(4);
  const auto k = reg.keygen(rng);
  const auto pair = reg.keypair(rng);
  const auto e = reg.asym_seal(pair.publicId, text("k"));
  EXPECT_EQ(code_of([&] { open(k, e); }), ErrorCode::WrongSealType);
  EXPECT_EQ(code_of([&] { reg.asym_open(pair.privateId, reg.seal(k, text("k"))); }), ErrorCode::WrongSealType);
}

TEST(AsymSeal, OnlyPairedPrivateOpens) {
  KeyRegistry reg(5);
  SeededRng rng(5);
  const auto server = reg.keypair(rng);
  const auto other = reg.keypair(rng);
  const Bytes msg = text("session key");
  const auto e = reg.asym_seal(server.publicId, msg);
  EXPECT_EQ(reg.asym_open(server.privateId, e), msg);
  EXPECT_EQ(code_of([&] { reg.asym_open(other.privateId, e); }), ErrorCode::AuthFailure);
  EXPECT_EQ(code_of([&] { reg.asym_open(server.publicId, e); }), ErrorCode::AuthFailure);
  EXPECT_EQ(code_of([&] { reg.asym_seal(12345, msg); }), ErrorCode::AuthFailure);
}

TEST(Certificates, ValidAndEveryFieldMutationRejected) {
  KeyRegistry reg(6);
  SeededRng rng(6);
  const auto pair = reg.keypair(rng);
  const auto cert = reg.issue_certificate(server_id(), pair.publicId);
  EXPECT_TRUE(reg.validate_certificate(cert));

  std::vector<Certificate> mutants;
  for (auto role : {Role::Client, Role::ServiceProvider, Role::InternetHost}) {
    auto m = cert;
    m.subject.role = role;
    mutants.push_back(m);
  }
  for (std::uint32_t idx : {1u, 2u, 0xFFFFFFFFu}) {
    auto m = cert;
    m.subject.index = idx;
    mutants.push_back(m);
  }
  for (int bit = 0; bit < 64; ++bit) {
    auto m = cert;
    m.subjectPublicId ^= std::uint64_t{1} << bit;
    mutants.push_back(m);
  }
  for (int bit = 0; bit < 64; ++bit) {
    auto m = cert;
    m.signature[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    mutants.push_back(m);
  }
  for (const auto& m : mutants) EXPECT_FALSE(reg.validate_certificate(m));

  // A different trust root does not accept it either.
  KeyRegistry other(7);
  EXPECT_FALSE(other.validate_certificate(cert));
}

TEST(Encoding, EnvelopeAndCertificateRoundTrip) {
  KeyRegistry reg(8);
  SeededRng rng(8);
  const auto k = reg.keygen(rng);
  const auto e = reg.seal(k, text("abc"));
  ByteWriter w;
  encode_envelope(w, e);
  encode_certificate(w, reg.issue_certificate(sp_id(2), 99));
  encode_key(w, k);
  ByteReader r(w.bytes());
  EXPECT_EQ(decode_envelope(r), e);
  EXPECT_EQ(decode_certificate(r), reg.issue_certificate(sp_id(2), 99));
  EXPECT_EQ(decode_key(r), k);
  EXPECT_TRUE(r.done());
}
