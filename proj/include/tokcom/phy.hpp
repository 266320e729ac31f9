#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tokcom {

/// One bit per element, values 0 or 1.
using Bits = std::vector<std::uint8_t>;
using Symbol = std::complex<double>;

// --- CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, xorout 0) ---

std::uint16_t crc16(std::span<const std::uint8_t> bits);
/// payload followed by its 16 CRC bits, MSB first.
Bits crc_append(std::span<const std::uint8_t> payload);

struct CrcResult {
  bool ok = false;
  Bits payload;
};
/// Throws if fewer than 17 bits.
CrcResult crc_check(std::span<const std::uint8_t> bits);

// --- Convolutional code ---------------------------------------------------

/// Rate-1/2 feedforward code, zero-flush terminated. Generator bit K-1
/// taps the current input bit.
struct ConvCode {
  unsigned constraint_length = 7;
  std::array<std::uint32_t, 2> polys{0171, 0133};

  ConvCode() = default;
  ConvCode(unsigned k, std::uint32_t g0, std::uint32_t g1);
  /// Generators as octal strings, e.g. ("171", "133").
  static ConvCode from_octal(unsigned k, const std::string& g0, const std::string& g1);

  unsigned memory() const { return constraint_length - 1; }
  std::size_t states() const { return std::size_t{1} << memory(); }
  std::size_t coded_length(std::size_t message_bits) const { return 2 * (message_bits + memory()); }
};

Bits conv_encode(const ConvCode& code, std::span<const std::uint8_t> bits);

/// Soft-decision Viterbi over the terminated trellis. llrs[i] = log P(0)/P(1)
/// for coded bit i; returns the message maximizing sum_i llr_i * (1 - 2 c_i)
/// with flush bits removed.
Bits viterbi_decode(const ConvCode& code, std::span<const double> llrs);

// --- Modulation -----------------------------------------------------------

/// Square Gray-labelled QAM (BPSK for M = 2), unit mean energy. The first
/// half of a label's bits select the in-phase level, the rest quadrature.
class Constellation {
 public:
  static Constellation qam(unsigned order);
  /// Unit-circle M-PSK, Gray labels around the circle, point 0 at angle 0.
  static Constellation psk(unsigned order);
  /// Same points, label_of_point[i] replacing point i's label.
  Constellation relabeled(std::vector<std::uint32_t> label_of_point) const;

  unsigned order() const { return static_cast<unsigned>(points_.size()); }
  unsigned bits_per_symbol() const { return bits_; }
  std::span<const Symbol> points() const { return points_; }
  std::uint32_t label(std::size_t point) const { return labels_[point]; }
  std::span<const std::uint32_t> labels() const { return labels_; }
  const Symbol& point_for_label(std::uint32_t label) const { return points_[point_of_label_[label]]; }
  std::size_t index_for_label(std::uint32_t label) const { return point_of_label_[label]; }
  /// Index of the nearest point (ties to the lower index).
  std::size_t slice(const Symbol& y) const;

 private:
  Constellation(std::vector<Symbol> points, std::vector<std::uint32_t> labels);

  unsigned bits_ = 0;
  std::vector<Symbol> points_;
  std::vector<std::uint32_t> labels_;
  std::vector<std::size_t> point_of_label_;
  // Split copies for the LLR kernel.
  std::vector<double> re_, im_;

  friend std::vector<double> demod_llr(const Constellation&, std::span<const Symbol>, double);
};

struct Modulated {
  std::vector<Symbol> symbols;
  std::size_t pad_bits = 0;  // zeros appended to fill the last symbol
};

Modulated modulate(const Constellation& c, std::span<const std::uint8_t> bits);

/// Channel configuration; SNR is Es/N0 per transmitted symbol (unit Es).
struct ChannelCfg {
  double snr_db = 10.0;
  double bandwidth_hz = 5.0e4;
  std::uint64_t seed = 0;

  double noise_var() const;  // N0 = 10^(-snr_db/10)
};

/// Adds circular complex Gaussian noise, variance N0/2 per component.
std::vector<Symbol> awgn(std::span<const Symbol> symbols, double snr_db, std::uint64_t noise_key);

inline constexpr double kLlrClamp = 50.0;

/// Max-log LLRs, bits_per_symbol per symbol, clamped to +-50.
std::vector<double> demod_llr(const Constellation& c, std::span<const Symbol> rx, double noise_var);

/// CSV lines "I,Q,label" with the nearest point's label, for debugging.
std::string symbol_trace_csv(const Constellation& c, std::span<const Symbol> symbols);

// --- Packet pipeline ------------------------------------------------------

struct PacketRx {
  Bits payload;  // Viterbi output with CRC stripped, even when the CRC fails
  bool crc_ok = false;
  std::size_t symbols = 0;
};

/// Symbols for a payload: ceil(2 (len + 16 + K - 1) / log2 M).
std::size_t packet_symbols(std::size_t payload_bits, const ConvCode& code, unsigned order);

/// crc_append -> conv_encode -> modulate -> awgn -> demod_llr ->
/// viterbi_decode -> crc_check. Noise comes from the channel substream
/// (cfg.seed, packet, attempt).
PacketRx phy_send_packet(std::span<const std::uint8_t> payload, const ConvCode& code, const Constellation& c,
                         const ChannelCfg& cfg, std::uint64_t packet = 0, std::uint64_t attempt = 0);

/// Standard normal upper tail Q(x).
double q_function(double x);

}  // namespace tokcom
