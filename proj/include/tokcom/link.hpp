#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tokcom/metrics.hpp"
#include "tokcom/phy.hpp"
#include "tokcom/predictor.hpp"
#include "tokcom/tokens.hpp"

namespace tokcom {

// --- Packetization --------------------------------------------------------

struct PacketPlan {
  std::size_t token_count = 0;
  std::uint32_t tokens_per_packet = 4;
  bool interleaved = false;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> packets;  // positions, ascending within a packet
};

/// Splits positions 0..N-1 into packets of P (last may be short). With
/// interleaving, positions are first shuffled by the Interleaver substream.
PacketPlan make_plan(std::size_t n, std::uint32_t tokens_per_packet, bool interleave, std::uint64_t seed);

/// One payload per packet, ceil(log2 Q) bits per token, MSB first.
std::vector<Bits> packetize(const TokenSequence& seq, const PacketPlan& plan);
TokenSequence depacketize(std::span<const Bits> payloads, const PacketPlan& plan, std::uint32_t q);

/// Token values read back from a payload. Values may be >= Q if the bits
/// were corrupted.
std::vector<std::uint32_t> unpack_tokens(std::span<const std::uint8_t> bits, std::size_t count, unsigned bits_per_token);

// --- MCS ------------------------------------------------------------------

struct McsEntry {
  unsigned mod_order = 16;
  unsigned code_id = 0;  // 0: K=7 (171,133), 1: K=3 (7,5)

  double bits_per_symbol() const;  // log2 M * code rate
  std::string name() const;
  friend bool operator==(const McsEntry&, const McsEntry&) = default;
};

ConvCode code_for(unsigned code_id);

/// Lookup from (SNR band, predictability band) to an entry. Bands are given
/// by ascending inner edges; a value equal to an edge falls in the upper band.
class McsPolicy {
 public:
  McsPolicy(std::vector<double> snr_edges, std::vector<double> r_edges, std::vector<std::vector<McsEntry>> table);
  /// 3 x 3 table over QPSK, 16-QAM and 64-QAM, all with the K=7 code.
  static McsPolicy default_table();
  /// Single entry regardless of SNR and predictability.
  static McsPolicy fixed(McsEntry entry);

  McsEntry select(double snr_db, double predictability) const;
  std::span<const double> snr_edges() const { return snr_edges_; }
  std::span<const double> r_edges() const { return r_edges_; }
  const std::vector<std::vector<McsEntry>>& table() const { return table_; }

 private:
  std::vector<double> snr_edges_;
  std::vector<double> r_edges_;
  std::vector<std::vector<McsEntry>> table_;
};

/// Per-position top-1 probability given every other token.
std::vector<double> token_predictability(const ProbModel& model, const TokenSequence& seq, const SideInfo& side);

// --- Channels -------------------------------------------------------------

/// Carries one packet payload. Implementations are deterministic in
/// (packet, attempt) and safe to share between threads.
class PacketChannel {
 public:
  virtual ~PacketChannel() = default;
  virtual PacketRx send(std::span<const std::uint8_t> payload, const McsEntry& mcs, std::uint64_t packet,
                        std::uint64_t attempt) const = 0;
  /// SNR used for MCS lookup; NaN when the channel has none.
  virtual double snr_db() const { return std::numeric_limits<double>::quiet_NaN(); }
};

/// Full coded PHY chain with AWGN.
class PhyChannel final : public PacketChannel {
 public:
  explicit PhyChannel(ChannelCfg cfg) : cfg_(cfg) {}
  /// Replaces the labeling of the order-M constellation.
  void set_labeling(unsigned order, std::vector<std::uint32_t> label_of_point);

  PacketRx send(std::span<const std::uint8_t> payload, const McsEntry& mcs, std::uint64_t packet,
                std::uint64_t attempt) const override;
  double snr_db() const override { return cfg_.snr_db; }
  const ChannelCfg& config() const { return cfg_; }

 private:
  ChannelCfg cfg_;
  std::map<unsigned, std::vector<std::uint32_t>> labelings_;
};

/// Each packet independently fails with probability `per`; a failed packet
/// arrives with uniformly random payload bits.
class ForcedPerChannel final : public PacketChannel {
 public:
  ForcedPerChannel(double per, std::uint64_t seed);
  PacketRx send(std::span<const std::uint8_t> payload, const McsEntry& mcs, std::uint64_t packet,
                std::uint64_t attempt) const override;
  double per() const { return per_; }

 private:
  double per_;
  std::uint64_t seed_;
};

std::unique_ptr<PacketChannel> forced_per_channel(double per, std::uint64_t seed);

// --- Transmission ---------------------------------------------------------

struct ArqPolicy {
  enum class Kind { FullReliable, MaskAndPredict, SelectiveRetx };
  Kind kind = Kind::MaskAndPredict;
  double threshold = 0.5;       // SelectiveRetx confidence threshold
  unsigned max_rounds = 1;      // SelectiveRetx retransmission rounds
  std::uint64_t max_attempts = 100000;  // FullReliable cap per packet

  static ArqPolicy full_reliable() { return {Kind::FullReliable}; }
  static ArqPolicy mask_and_predict() { return {Kind::MaskAndPredict}; }
  static ArqPolicy selective(double threshold, unsigned max_rounds);
  void validate() const;
  std::string name() const;
};

struct PacketLog {
  std::size_t packet_id = 0;
  std::vector<std::size_t> positions;
  McsEntry mcs;
  bool crc_ok = false;  // first attempt
  std::uint64_t retx_count = 0;
  std::vector<std::uint32_t> tokens_sent;
  std::vector<std::uint32_t> tokens_decoded;  // first attempt, raw
  bool masked = false;                        // still missing when prediction ran last
  std::vector<std::uint32_t> filled_ids;
  std::vector<double> confidences;
};

struct LinkReport {
  RunStats stats;
  std::size_t packets = 0;
  std::uint64_t transmissions = 0;
  std::uint64_t symbols = 0;
  std::uint64_t payload_bits = 0;  // over all transmissions
  std::uint64_t failures = 0;      // transmissions with a failed CRC
  std::uint64_t token_errors_before = 0;
  std::uint64_t token_errors_after = 0;
  double tce = 0.0;
  double bpp = 0.0;
  double comm_time_s = 0.0;     // closed form at the measured T
  double air_time_s = 0.0;      // measured symbols / bandwidth
  double compute_time_s = 0.0;
  std::vector<PacketLog> log;

  /// Correct tokens per channel symbol.
  double goodput(std::size_t n) const;
};

struct TransmitOptions {
  FillOptions fill{};
  SystemParams params{};
  ComputeProfile profile{};
  double bandwidth_hz = 5.0e4;
  bool keep_log = true;
};

struct TransmitResult {
  TokenSequence recovered;
  LinkReport report;
};

/// Sends `seq` packet by packet under `policy`. `mcs` is consulted per packet
/// with the channel SNR and the packet's mean token predictability; `model`
/// is required for prediction policies and for non-fixed MCS tables.
TransmitResult transmit(const TokenSequence& seq, const SideInfo& side, const PacketPlan& plan,
                        const ArqPolicy& policy, const McsPolicy& mcs, const PacketChannel& channel,
                        const ProbModel* model, const TransmitOptions& options = {});

/// Per-packet log as CSV with a header row.
std::string packet_log_csv(std::span<const PacketLog> log, const std::string& run_id);

}  // namespace tokcom
