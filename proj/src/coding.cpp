#include "awima/coding.hpp"

#include "awima/bytes.hpp"

#include <algorithm>

namespace awima {

namespace gf256 {
namespace {

struct Tables {
  std::array<std::uint8_t, 512> exp{};
  std::array<int, 256> log{};

  Tables() {
    unsigned x = 1;
    for (int i = 0; i < 255; ++i) {
      exp[i] = static_cast<std::uint8_t>(x);
      log[x] = i;
      x <<= 1;
      if (x & 0x100) x ^= kPoly;
    }
    for (int i = 255; i < 512; ++i) exp[i] = exp[i - 255];
    log[0] = -1;
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

}  // namespace

std::uint8_t mul(std::uint8_t a, std::uint8_t b) noexcept {
  if (a == 0 || b == 0) return 0;
  const auto& t = tables();
  return t.exp[t.log[a] + t.log[b]];
}

std::uint8_t div(std::uint8_t a, std::uint8_t b) {
  if (b == 0) throw Error(ErrorCode::RangeError, "division by zero in GF(256)");
  if (a == 0) return 0;
  const auto& t = tables();
  return t.exp[t.log[a] + 255 - t.log[b]];
}

std::uint8_t inv(std::uint8_t a) { return div(1, a); }

std::uint8_t pow(std::uint8_t a, unsigned e) noexcept {
  std::uint8_t r = 1;
  for (unsigned i = 0; i < e; ++i) r = mul(r, a);
  return r;
}

}  // namespace gf256

void CodingConfig::validate() const {
  if (k < 1 || n < k || n > 255) throw Error(ErrorCode::ConfigError, "coding needs 1 <= k <= n <= 255");
}

namespace {

using Matrix = std::vector<std::vector<std::uint8_t>>;

/// Gauss-Jordan inverse; the caller guarantees invertibility.
Matrix invert(Matrix m) {
  const std::size_t k = m.size();
  Matrix inv(k, std::vector<std::uint8_t>(k, 0));
  for (std::size_t i = 0; i < k; ++i) inv[i][i] = 1;
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t pivot = col;
    while (pivot < k && m[pivot][col] == 0) ++pivot;
    if (pivot == k) throw Error(ErrorCode::Insufficient, "singular decoding matrix");
    std::swap(m[pivot], m[col]);
    std::swap(inv[pivot], inv[col]);
    const std::uint8_t scale = gf256::inv(m[col][col]);
    for (std::size_t j = 0; j < k; ++j) {
      m[col][j] = gf256::mul(m[col][j], scale);
      inv[col][j] = gf256::mul(inv[col][j], scale);
    }
    for (std::size_t row = 0; row < k; ++row) {
      if (row == col || m[row][col] == 0) continue;
      const std::uint8_t f = m[row][col];
      for (std::size_t j = 0; j < k; ++j) {
        m[row][j] ^= gf256::mul(f, m[col][j]);
        inv[row][j] ^= gf256::mul(f, inv[col][j]);
      }
    }
  }
  return inv;
}

// Vandermonde row for evaluation point x: [1, x, x^2, ...].
std::vector<std::uint8_t> vandermonde_row(std::uint8_t x, unsigned k) {
  std::vector<std::uint8_t> row(k);
  for (unsigned j = 0; j < k; ++j) row[j] = gf256::pow(x, j);
  return row;
}

}  // namespace

std::vector<std::uint8_t> generator_row(const CodingConfig& cfg, unsigned i) {
  cfg.validate();
  if (i >= cfg.n) throw Error(ErrorCode::RangeError, "generator row out of range");
  if (i < cfg.k) {
    std::vector<std::uint8_t> unit(cfg.k, 0);
    unit[i] = 1;
    return unit;
  }
  // G = V * inverse(V_top): systematic and every k rows stay independent.
  Matrix top;
  for (unsigned r = 0; r < cfg.k; ++r) top.push_back(vandermonde_row(static_cast<std::uint8_t>(r), cfg.k));
  const Matrix top_inv = invert(top);
  const auto v = vandermonde_row(static_cast<std::uint8_t>(i), cfg.k);
  std::vector<std::uint8_t> row(cfg.k, 0);
  for (unsigned j = 0; j < cfg.k; ++j) {
    std::uint8_t acc = 0;
    for (unsigned t = 0; t < cfg.k; ++t) acc ^= gf256::mul(v[t], top_inv[t][j]);
    row[j] = acc;
  }
  return row;
}

CodedGroup encode_group(const CodingConfig& cfg, std::uint64_t groupId, const std::vector<Bytes>& packets) {
  cfg.validate();
  if (packets.size() != cfg.k) throw Error(ErrorCode::ConfigError, "encode_group needs exactly k packets");
  std::size_t width = 0;
  for (const auto& p : packets) width = std::max(width, p.size());

  CodedGroup g;
  g.groupId = groupId;
  for (const auto& p : packets) g.originalLengths.push_back(p.size());
  for (unsigned i = 0; i < cfg.k; ++i) {
    Bytes d = packets[i];
    d.resize(width, 0);
    g.shards.push_back(Shard{static_cast<std::uint8_t>(i), std::move(d), false});
  }
  for (unsigned i = cfg.k; i < cfg.n; ++i) {
    const auto row = generator_row(cfg, i);
    Bytes parity(width, 0);
    for (unsigned j = 0; j < cfg.k; ++j) {
      if (row[j] == 0) continue;
      const auto& src = g.shards[j].data;
      for (std::size_t b = 0; b < width; ++b) parity[b] ^= gf256::mul(row[j], src[b]);
    }
    g.shards.push_back(Shard{static_cast<std::uint8_t>(i), std::move(parity), true});
  }
  return g;
}

std::vector<Bytes> decode_group(const CodingConfig& cfg, const std::vector<Shard>& received,
                                const std::vector<std::size_t>& originalLengths) {
  cfg.validate();
  std::map<std::uint8_t, const Shard*> distinct;
  for (const auto& s : received) {
    if (s.index >= cfg.n) throw Error(ErrorCode::RangeError, "shard index out of range");
    distinct.emplace(s.index, &s);
  }
  if (distinct.size() < cfg.k) throw Error(ErrorCode::Insufficient, "fewer than k shards");

  // Prefer systematic shards so the common case needs no arithmetic.
  std::vector<const Shard*> use;
  for (const auto& [idx, s] : distinct) {
    if (use.size() == cfg.k) break;
    use.push_back(s);
  }
  const std::size_t width = use.front()->data.size();
  for (const auto* s : use) {
    if (s->data.size() != width) throw Error(ErrorCode::DecodeError, "shard widths differ");
  }

  std::vector<Bytes> out(cfg.k);
  bool all_systematic = true;
  for (unsigned i = 0; i < cfg.k; ++i) all_systematic = all_systematic && use[i]->index == i;
  if (all_systematic) {
    for (unsigned i = 0; i < cfg.k; ++i) out[i] = use[i]->data;
  } else {
    Matrix m;
    for (const auto* s : use) m.push_back(generator_row(cfg, s->index));
    const Matrix d = invert(m);
    for (unsigned i = 0; i < cfg.k; ++i) {
      Bytes row(width, 0);
      for (unsigned j = 0; j < cfg.k; ++j) {
        if (d[i][j] == 0) continue;
        const auto& src = use[j]->data;
        for (std::size_t b = 0; b < width; ++b) row[b] ^= gf256::mul(d[i][j], src[b]);
      }
      out[i] = std::move(row);
    }
  }
  if (!originalLengths.empty()) {
    if (originalLengths.size() != cfg.k) throw Error(ErrorCode::RangeError, "originalLengths size mismatch");
    for (unsigned i = 0; i < cfg.k; ++i) {
      if (originalLengths[i] > width) throw Error(ErrorCode::DecodeError, "original length exceeds shard");
      out[i].resize(originalLengths[i]);
    }
  }
  return out;
}

Bytes frame_symbol(ByteView packet) {
  ByteWriter w;
  w.blob16(packet);
  return std::move(w).take();
}

Bytes unframe_symbol(ByteView symbol) {
  ByteReader r(symbol);
  Bytes out = r.blob16();
  while (!r.done()) {
    if (r.u8() != 0) throw Error(ErrorCode::DecodeError, "non-zero shard padding");
  }
  return out;
}

// ---- GroupEncoder ----

GroupEncoder::GroupEncoder(CodingConfig cfg, FlowId flow) : cfg_(cfg), flow_(flow) { cfg_.validate(); }

std::vector<ShardFrame> GroupEncoder::add(Bytes encodedInner, SimTime now) {
  if (!since_) since_ = now;
  pending_.push_back(std::move(encodedInner));
  if (pending_.size() < cfg_.k) return {};
  return emit();
}

std::vector<ShardFrame> GroupEncoder::flush() {
  if (pending_.empty()) return {};
  return emit();
}

std::vector<ShardFrame> GroupEncoder::emit() {
  const unsigned k = static_cast<unsigned>(pending_.size());
  const CodingConfig cfg{k, k + (cfg_.n - cfg_.k)};
  std::vector<Bytes> symbols;
  for (const auto& p : pending_) symbols.push_back(frame_symbol(p));
  const auto group = encode_group(cfg, next_group_, symbols);
  std::vector<ShardFrame> out;
  for (const auto& s : group.shards) {
    out.push_back(ShardFrame{flow_, next_group_, s.index, static_cast<std::uint8_t>(cfg.k),
                             static_cast<std::uint8_t>(cfg.n), s.data});
  }
  ++next_group_;
  pending_.clear();
  since_.reset();
  return out;
}

// ---- GroupDecoder ----

GroupDecoder::Output GroupDecoder::push(const ShardFrame& s) {
  Output out;
  out.group = s.group;
  State& st = groups_[s.group];
  if (st.k == 0) {
    st.k = s.k;
    st.n = s.n;
  } else if (st.k != s.k || st.n != s.n) {
    throw Error(ErrorCode::DecodeError, "shard geometry changed within a group");
  }
  if (st.complete || st.shards.count(s.index) != 0) return out;
  st.shards.emplace(s.index, s.symbol);

  if (s.index < st.k && st.delivered.insert(s.index).second) {
    out.packets.push_back(unframe_symbol(s.symbol));
  }
  if (st.delivered.size() == st.k) {
    st.complete = true;
    st.shards.clear();
    return out;
  }
  if (st.shards.size() >= st.k) {
    std::vector<Shard> have;
    for (const auto& [idx, data] : st.shards) have.push_back(Shard{idx, data, idx >= st.k});
    const auto symbols = decode_group(CodingConfig{st.k, st.n}, have, {});
    for (unsigned i = 0; i < st.k; ++i) {
      if (st.delivered.insert(static_cast<std::uint8_t>(i)).second) {
        out.packets.push_back(unframe_symbol(symbols[i]));
        out.recovered = true;
      }
    }
    st.complete = true;
    st.shards.clear();
  }
  return out;
}

std::vector<GroupDecoder::Failure> GroupDecoder::failures() const {
  std::vector<Failure> out;
  for (const auto& [id, st] : groups_) {
    if (st.complete) continue;
    out.push_back(Failure{id, st.k - static_cast<unsigned>(st.delivered.size()),
                          static_cast<unsigned>(st.shards.size()), st.k});
  }
  return out;
}

}  // namespace awima
