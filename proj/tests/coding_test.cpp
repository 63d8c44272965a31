#include "awima/coding.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace awima;

namespace {

std::vector<Bytes> random_packets(SeededRng& rng, unsigned k) {
  std::vector<Bytes> out;
  for (unsigned i = 0; i < k; ++i) {
    Bytes b(1 + rng.below(40));
    rng.fill(b);
    out.push_back(b);
  }
  return out;
}

// Every subset of {0..n-1} of size m, as bitmasks.
std::vector<unsigned> subsets(unsigned n, unsigned m) {
  std::vector<unsigned> out;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<unsigned>(__builtin_popcount(mask)) == m) out.push_back(mask);
  }
  return out;
}

// Independent schoolbook multiply with reduction, to check the tables.
std::uint8_t slow_mul(std::uint8_t a, std::uint8_t b) {
  unsigned r = 0;
  for (int i = 0; i < 8; ++i) {
    if (b & (1 << i)) r ^= static_cast<unsigned>(a) << i;
  }
  for (int bit = 14; bit >= 8; --bit) {
    if (r & (1u << bit)) r ^= gf256::kPoly << (bit - 8);
  }
  return static_cast<std::uint8_t>(r);
}

}  // namespace

TEST(Gf256, TablesMatchSchoolbookArithmetic) {
  for (unsigned a = 0; a < 256; ++a) {
    for (unsigned b = 0; b < 256; ++b) {
      ASSERT_EQ(gf256::mul(static_cast<std::uint8_t>(a), static_cast<std::uint8_t>(b)),
                slow_mul(static_cast<std::uint8_t>(a), static_cast<std::uint8_t>(b)));
    }
    if (a != 0) EXPECT_EQ(gf256::mul(static_cast<std::uint8_t>(a), gf256::inv(static_cast<std::uint8_t>(a))), 1);
  }
  EXPECT_THROW(gf256::div(1, 0), Error);
}

TEST(EncodeGroup, SystematicAndDegenerateCases) {
  SeededRng rng(1);
  const auto pk = random_packets(rng, 3);
  const auto pass = encode_group({3, 3}, 0, pk);
  ASSERT_EQ(pass.shards.size(), 3u);
  for (unsigned i = 0; i < 3; ++i) {
    EXPECT_FALSE(pass.shards[i].parity);
    Bytes trimmed = pass.shards[i].data;
    trimmed.resize(pk[i].size());
    EXPECT_EQ(trimmed, pk[i]);
  }
  const auto rep = encode_group({1, 2}, 0, {Bytes{1, 2, 3}});
  EXPECT_EQ(rep.shards[1].data, rep.shards[0].data);
  EXPECT_TRUE(rep.shards[1].parity);

  EXPECT_THROW(encode_group({0, 2}, 0, {}), Error);
  EXPECT_THROW(encode_group({3, 2}, 0, pk), Error);
  EXPECT_THROW(encode_group({2, 256}, 0, {Bytes{1}, Bytes{2}}), Error);
  EXPECT_THROW(encode_group({4, 6}, 0, pk), Error);
  EXPECT_EQ(encode_group({3, 5}, 9, pk).shards[4].data, encode_group({3, 5}, 9, pk).shards[4].data);
}

TEST(DecodeGroup, K4N6AllTwoErasurePatternsAndFourSubsets) {
  SeededRng rng(2);
  const CodingConfig cfg{4, 6};
  const auto pk = random_packets(rng, 4);
  const auto g = encode_group(cfg, 0, pk);
  const auto erasures = subsets(6, 2);
  ASSERT_EQ(erasures.size(), 15u);
  for (unsigned mask : erasures) {
    std::vector<Shard> got;
    for (const auto& s : g.shards) {
      if (!(mask & (1u << s.index))) got.push_back(s);
    }
    EXPECT_EQ(decode_group(cfg, got, g.originalLengths), pk) << "erased mask " << mask;
  }
  for (unsigned mask : subsets(6, 4)) {
    std::vector<Shard> got;
    for (const auto& s : g.shards) {
      if (mask & (1u << s.index)) got.push_back(s);
    }
    EXPECT_EQ(decode_group(cfg, got, g.originalLengths), pk);
  }
  std::vector<Shard> three(g.shards.begin() + 2, g.shards.begin() + 5);
  try {
    decode_group(cfg, three, g.originalLengths);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Insufficient);
  }
  // Duplicated shards do not count twice.
  std::vector<Shard> dup{g.shards[0], g.shards[0], g.shards[1], g.shards[5]};
  EXPECT_THROW(decode_group(cfg, dup, g.originalLengths), Error);
}

TEST(DecodeGroup, MdsExhaustiveUpToEight) {
  SeededRng rng(3);
  for (unsigned n = 1; n <= 8; ++n) {
    for (unsigned k = 1; k <= n; ++k) {
      const CodingConfig cfg{k, n};
      const auto pk = random_packets(rng, k);
      const auto g = encode_group(cfg, 0, pk);
      for (unsigned mask : subsets(n, k)) {
        std::vector<Shard> got;
        for (const auto& s : g.shards) {
          if (mask & (1u << s.index)) got.push_back(s);
        }
        ASSERT_EQ(decode_group(cfg, got, g.originalLengths), pk) << "k=" << k << " n=" << n << " mask=" << mask;
      }
    }
  }
}

TEST(GroupCodec, ShortGroupsAndRecoveryThroughFrames) {
  const FlowId flow{client_id(1), 2};
  GroupEncoder enc({4, 6}, flow);
  GroupDecoder dec;
  std::vector<Bytes> sent;
  std::vector<Bytes> got;
  SeededRng rng(4);
  std::vector<ShardFrame> frames;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto p = fixtures::uplink_packet(addr_plan::kClientVpnBase, 2, i, 5 + i);
    sent.push_back(encode_inner(p));
    auto out = enc.add(sent.back(), static_cast<SimTime>(i));
    frames.insert(frames.end(), out.begin(), out.end());
  }
  EXPECT_EQ(enc.buffered(), 2u);
  auto tail = enc.flush();
  ASSERT_EQ(tail.size(), 4u);  // k'=2, n'=4
  EXPECT_EQ(tail[0].k, 2);
  EXPECT_EQ(tail[0].n, 4);
  frames.insert(frames.end(), tail.begin(), tail.end());

  // Drop shards 0 and 3 of every group: at most n-k erasures each.
  int recovered = 0;
  for (const auto& f : frames) {
    if (f.index == 0 || f.index == 3) continue;
    const auto out = dec.push(std::get<ShardFrame>(decode_frame(encode_frame(f))));
    recovered += out.recovered;
    got.insert(got.end(), out.packets.begin(), out.packets.end());
  }
  EXPECT_EQ(recovered, 3);
  std::sort(got.begin(), got.end());
  std::sort(sent.begin(), sent.end());
  EXPECT_EQ(got, sent);
  EXPECT_TRUE(dec.failures().empty());
}

TEST(GroupCodec, TooManyErasuresReportFailure) {
  const FlowId flow{client_id(1), 0};
  GroupEncoder enc({4, 6}, flow);
  GroupDecoder dec;
  std::vector<ShardFrame> frames;
  for (std::uint64_t i = 0; i < 4; ++i) {
    auto out = enc.add(encode_inner(fixtures::uplink_packet(addr_plan::kClientVpnBase, 0, i)), 0);
    frames.insert(frames.end(), out.begin(), out.end());
  }
  std::size_t delivered = 0;
  for (const auto& f : frames) {
    if (f.index <= 2) continue;
    delivered += dec.push(f).packets.size();
  }
  EXPECT_EQ(delivered, 1u);
  const auto fails = dec.failures();
  ASSERT_EQ(fails.size(), 1u);
  EXPECT_EQ(fails[0].missing, 3u);
}
