#include "tokcom/entropy_coding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bytes.hpp"

namespace tokcom {

namespace {

constexpr std::uint16_t kCompressedVersion = 1;
constexpr std::uint32_t kTop = 1u << 24;

// 32-bit range coder with carry propagation. `low` holds a carry bit above
// its 32-bit window; settled bytes wait in `cache_` plus a run of pending
// 0xFF bytes until the carry into them is known. The first byte the scheme
// would emit is always zero and is omitted from the stream.
class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq) {
    const std::uint32_t r = range_ >> kProbBits;
    low_ += static_cast<std::uint64_t>(r) * cum;
    range_ = r * freq;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  BitBuffer finish() {
    // Shortest codeword whose whole dyadic interval lies in [low, low + range).
    // The decoder reads zeros past the end of the stream.
    const std::uint64_t hi = low_ + range_;
    int dropped = 0;
    for (int t = 32; t >= 0; --t) {
      const std::uint64_t mask = (std::uint64_t{1} << t) - 1;
      const std::uint64_t v = (low_ + mask) & ~mask;
      if (v + mask < hi) {
        low_ = v;
        dropped = t;
        break;
      }
    }
    for (int i = 0; i < 5; ++i) shift_low();
    const std::uint64_t bits = out_.size() * 8 - static_cast<std::uint64_t>(dropped);
    out_.resize((bits + 7) / 8);
    return BitBuffer(std::move(out_), bits);
  }

 private:
  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 32);
      std::uint8_t byte = cache_;
      do {
        emit(static_cast<std::uint8_t>(byte + carry));
        byte = 0xFF;
      } while (--pending_ != 0);
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    }
    ++pending_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  void emit(std::uint8_t b) {
    if (first_) {
      first_ = false;
      return;
    }
    out_.push_back(b);
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 1;
  bool first_ = true;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(const BitBuffer& in) : in_(in.bytes()) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  /// Target frequency in [0, 2^16).
  std::uint32_t peek() {
    r_ = range_ >> kProbBits;
    const std::uint32_t v = code_ / r_;
    if (v >= kProbTotal) throw FormatError("corrupt arithmetic-coded stream");
    return v;
  }

  void consume(std::uint32_t cum, std::uint32_t freq) {
    code_ -= r_ * cum;
    range_ = r_ * freq;
    while (range_ < kTop) {
      range_ <<= 8;
      code_ = (code_ << 8) | next_byte();
    }
  }

 private:
  std::uint32_t next_byte() { return pos_ < in_.size() ? in_[pos_++] : (++pos_, 0u); }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t r_ = 0;
};

void check_causal(const ProbModel& model, std::uint32_t q) {
  if (!model.caps().causal) throw std::invalid_argument("arithmetic coding requires a causal model");
  if (model.q() != q) throw std::invalid_argument("model/codebook mismatch");
  if (q > kProbTotal / 2) throw std::invalid_argument("codebook too large for 16-bit probability quantization");
}

}  // namespace

// --- BitBuffer ------------------------------------------------------------

BitBuffer::BitBuffer(std::vector<std::uint8_t> bytes, std::uint64_t bit_length)
    : bytes_(std::move(bytes)), bit_length_(bit_length) {
  if (bytes_.size() != (bit_length_ + 7) / 8) throw std::invalid_argument("bit length does not match byte count");
  if (bit_length_ % 8 != 0 && (bytes_.back() & (0xFFu >> (bit_length_ % 8))) != 0)
    throw std::invalid_argument("padding bits must be zero");
}

void BitBuffer::push_bit(bool b) {
  if (bit_length_ % 8 == 0) bytes_.push_back(0);
  if (b) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bit_length_ % 8));
  ++bit_length_;
}

BitBuffer BitBuffer::prefix(std::uint64_t bits) const {
  if (bits > bit_length_) throw std::out_of_range("prefix longer than buffer");
  std::vector<std::uint8_t> b(bytes_.begin(), bytes_.begin() + static_cast<std::ptrdiff_t>((bits + 7) / 8));
  if (bits % 8 != 0) b.back() &= static_cast<std::uint8_t>(0xFFu << (8 - bits % 8));
  return BitBuffer(std::move(b), bits);
}

// --- Quantization ---------------------------------------------------------

FrequencyTable quantize_pmf(std::span<const double> pmf) {
  const std::size_t q = pmf.size();
  if (q < 2 || q > kProbTotal / 2) throw std::invalid_argument("quantize_pmf: unsupported alphabet size");
  double total = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("quantize_pmf: invalid probability");
    total += p;
  }
  if (!(total > 0.0)) throw std::invalid_argument("quantize_pmf: zero total mass");

  const double spare = static_cast<double>(kProbTotal - q);
  FrequencyTable t;
  t.freq.resize(q);
  std::vector<double> remainder(q);
  std::uint32_t assigned = 0;
  for (std::size_t x = 0; x < q; ++x) {
    const double share = pmf[x] / total * spare;
    const double whole = std::floor(share);
    t.freq[x] = 1 + static_cast<std::uint32_t>(whole);
    remainder[x] = share - whole;
    assigned += t.freq[x];
  }
  if (assigned > kProbTotal) throw std::logic_error("quantize_pmf: over-assigned");
  std::uint32_t leftover = kProbTotal - assigned;
  if (leftover > 0) {
    std::vector<std::uint32_t> order(q);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; leftover > 0; ++i, --leftover) ++t.freq[order[i % q]];
  }
  t.cum.resize(q + 1);
  t.cum[0] = 0;
  for (std::size_t x = 0; x < q; ++x) t.cum[x + 1] = t.cum[x] + t.freq[x];
  return t;
}

// --- Coding ---------------------------------------------------------------

BitBuffer ac_encode(const ProbModel& model, const TokenSequence& seq, const SideInfo& side) {
  check_causal(model, seq.q());
  RangeEncoder enc;
  std::vector<double> dist(seq.q());
  const auto ids = seq.ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    model.causal_dist(ids.first(i), side, dist);
    if (!(dist[ids[i]] > 0.0))
      throw std::invalid_argument("zero-probability symbol at position " + std::to_string(i));
    const auto table = quantize_pmf(dist);
    enc.encode(table.cum[ids[i]], table.freq[ids[i]]);
  }
  return enc.finish();
}

TokenSequence ac_decode(const ProbModel& model, const BitBuffer& bits, std::size_t n, const SideInfo& side) {
  const std::uint32_t q = model.q();
  check_causal(model, q);
  if (n == 0) throw std::invalid_argument("ac_decode: n must be >= 1");
  RangeDecoder dec(bits);
  std::vector<TokenId> ids;
  ids.reserve(n);
  std::vector<double> dist(q);
  for (std::size_t i = 0; i < n; ++i) {
    model.causal_dist(ids, side, dist);
    const auto table = quantize_pmf(dist);
    const std::uint32_t target = dec.peek();
    const auto it = std::upper_bound(table.cum.begin(), table.cum.end(), target);
    const auto x = static_cast<TokenId>(it - table.cum.begin() - 1);
    dec.consume(table.cum[x], table.freq[x]);
    ids.push_back(x);
  }
  TokenSequence out(q, std::move(ids));
  if (!(ac_encode(model, out, side) == bits)) throw FormatError("arithmetic-coded stream is truncated or corrupt");
  return out;
}

std::vector<double> recoverability(const ProbModel& model, const TokenSequence& seq, const SideInfo& side) {
  if (model.q() != seq.q()) throw std::invalid_argument("model/codebook mismatch");
  MaskedSequence probe(seq);
  std::vector<double> dist(seq.q()), score(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    probe.mask(i);
    model.masked_dist(probe, i, side, dist);
    score[i] = dist[seq[i]];
    probe.set(i, seq[i]);
  }
  return score;
}

MaskedSequence drop_tokens(const ProbModel& model, const TokenSequence& seq, const SideInfo& side,
                           double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw std::invalid_argument("keep_fraction must lie in (0, 1]");
  const std::size_t n = seq.size();
  const auto drop = static_cast<std::size_t>(std::floor((1.0 - keep_fraction) * static_cast<double>(n) + 1e-9));
  MaskedSequence out(seq);
  if (drop == 0) return out;
  const auto score = recoverability(model, seq, side);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  for (std::size_t i = 0; i < drop; ++i) out.mask(order[i]);
  return out;
}

// --- TOKZ container -------------------------------------------------------

std::vector<std::uint8_t> CompressedFile::encode() const {
  detail::ByteWriter w;
  w.put_bytes(std::string_view("TOKZ"));
  w.put_u16(kCompressedVersion);
  w.put_u32(q);
  w.put_u32(n);
  w.put_u32(side_label);
  w.put_u64(payload.length());
  w.put_bytes(payload.bytes());
  return w.take();
}

CompressedFile CompressedFile::decode(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic("TOKZ");
  const auto version = r.u16("version");
  if (version != kCompressedVersion) throw FormatError("unsupported TOKZ version " + std::to_string(version));
  CompressedFile f;
  f.q = r.u32("Q");
  f.n = r.u32("N");
  f.side_label = r.u32("side-info label");
  const auto bits = r.u64("payload bit length");
  if (bits / 8 > r.remaining()) throw FormatError("truncated file in payload");
  const auto body = r.bytes((bits + 7) / 8, "payload");
  if (r.remaining() != 0) throw FormatError("trailing bytes after payload");
  try {
    f.payload = BitBuffer(std::vector<std::uint8_t>(body.begin(), body.end()), bits);
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return f;
}

void save_compressed(const std::filesystem::path& path, const CompressedFile& file) {
  detail::write_file_atomic(path, file.encode());
}

CompressedFile load_compressed(const std::filesystem::path& path) {
  return CompressedFile::decode(detail::read_file(path));
}

}  // namespace tokcom
