#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tokcom/predictor.hpp"
#include "tokcom/tokens.hpp"

namespace tokcom {

/// Bit string, MSB-first within each byte. Bits past length() are zero.
class BitBuffer {
 public:
  BitBuffer() = default;
  /// Adopts `bytes`; bits at or beyond `bit_length` must be zero.
  BitBuffer(std::vector<std::uint8_t> bytes, std::uint64_t bit_length);

  std::uint64_t length() const { return bit_length_; }
  std::span<const std::uint8_t> bytes() const { return bytes_; }
  bool bit(std::uint64_t i) const { return (bytes_[i / 8] >> (7 - i % 8)) & 1u; }
  void push_bit(bool b);
  /// First `bits` bits of this buffer.
  BitBuffer prefix(std::uint64_t bits) const;

  friend bool operator==(const BitBuffer&, const BitBuffer&) = default;

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bit_length_ = 0;
};

inline constexpr unsigned kProbBits = 16;
inline constexpr std::uint32_t kProbTotal = 1u << kProbBits;

/// Integer frequencies summing to 2^16, every symbol >= 1. Deterministic
/// largest-remainder rounding (ties to the lower id).
struct FrequencyTable {
  std::vector<std::uint32_t> freq;
  std::vector<std::uint32_t> cum;  // size q + 1
};
FrequencyTable quantize_pmf(std::span<const double> pmf);

/// Arithmetic coding with a causal model as the probability source.
/// Side info is an out-of-band input and is not coded into the stream.
BitBuffer ac_encode(const ProbModel& model, const TokenSequence& seq, const SideInfo& side = {});

/// Inverse of ac_encode for `n` tokens. The decoder re-encodes its output and
/// throws FormatError if the result does not reproduce `bits` exactly, which
/// catches truncated or corrupted streams.
TokenSequence ac_decode(const ProbModel& model, const BitBuffer& bits, std::size_t n, const SideInfo& side = {});

/// Masks the floor((1 - keep_fraction) * N) positions whose true token the
/// model recovers best from all other tokens (leave-one-out), ties to the
/// lower index.
MaskedSequence drop_tokens(const ProbModel& model, const TokenSequence& seq, const SideInfo& side,
                           double keep_fraction);

/// Leave-one-out probability of each true token.
std::vector<double> recoverability(const ProbModel& model, const TokenSequence& seq, const SideInfo& side);

/// "TOKZ" container. A missing side-info label is stored as 0xFFFFFFFF.
struct CompressedFile {
  static constexpr std::uint32_t kNoLabel = 0xFFFFFFFFu;

  std::uint32_t q = 0;
  std::uint32_t n = 0;
  std::uint32_t side_label = kNoLabel;
  BitBuffer payload;

  std::vector<std::uint8_t> encode() const;
  static CompressedFile decode(std::span<const std::uint8_t> bytes);
};

void save_compressed(const std::filesystem::path& path, const CompressedFile& file);
CompressedFile load_compressed(const std::filesystem::path& path);

}  // namespace tokcom
