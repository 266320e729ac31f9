#pragma once

#include <cstdint>
#include <string>

namespace tokcom {

/// Image/link parameters behind the efficiency and latency formulas.
struct SystemParams {
  std::uint32_t height = 256;
  std::uint32_t width = 256;
  std::uint32_t tokens = 256;  // N
  std::uint32_t q = 1024;
  double code_rate = 0.5;
  unsigned mod_order = 16;
  double bandwidth_hz = 5.0e4;
  std::uint32_t tokens_per_packet = 4;
  unsigned crc_bits = 16;
  unsigned constraint_length = 7;

  void validate() const;
  std::uint64_t pixels() const { return std::uint64_t{height} * width; }
};

/// Receiver-side predictor cost. precision_factor is TOPS per FP32 TFLOP:
/// 24 for FP4, 12 for INT8.
struct ComputeProfile {
  double workload_tflops = 0.8;
  double device_tops = 1000.0;
  double precision_factor = 24.0;

  void validate() const;
  static ComputeProfile fp4(double device_tops = 1000.0) { return {0.8, device_tops, 24.0}; }
  static ComputeProfile int8(double device_tops = 275.0) { return {0.8, device_tops, 12.0}; }
};

/// Pixels per transmitted payload bit: h*w / (T * N * log2 Q), with the
/// literal (possibly fractional) log2 Q.
double tce(const SystemParams& p, double retx);
/// Bits per pixel, the reciprocal of tce.
double bpp(const SystemParams& p, double retx);

/// Exact tce for power-of-two Q and rational T = t_num / t_den, reduced.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Ratio&, const Ratio&) = default;
};
Ratio tce_exact(const SystemParams& p, std::uint64_t t_num, std::uint64_t t_den);

/// 1 / (1 - per). Throws for per outside [0, 1).
double expected_retx(double per);

/// N * ceil(log2 Q), plus per-packet CRC and trellis flush bits when
/// include_overhead.
double transmitted_bits(const SystemParams& p, bool include_overhead);

/// T * bits / (code_rate * log2 M) / bandwidth, in seconds.
double comm_time(const SystemParams& p, double retx, bool include_overhead = false);

/// workload * precision_factor / device_tops, in seconds.
double compute_time(const ComputeProfile& profile);

/// Retransmission time saved by not retransmitting, compared with compute.
bool prediction_pays_off(const SystemParams& p, double retx, const ComputeProfile& profile);

struct RunStats {
  double per = 0.0;
  double ter_before = 0.0;
  double ter_after = 0.0;
  double t_avg = 1.0;
};

/// One output row. Values are stored unrounded.
struct ReportRow {
  double snr_db = 0.0;
  double per = 0.0;
  double ter_before = 0.0;
  double ter_after = 0.0;
  double t_avg = 1.0;
  double tce = 0.0;
  double bpp = 0.0;
  double comm_time_ms = 0.0;
  double comm_time_overhead_ms = 0.0;
  double compute_time_ms = 0.0;
  bool crossover = false;
  std::string policy;
  std::uint64_t seed = 0;
};

/// Joins measured statistics with the closed-form metrics. The expected
/// retransmission count used for the crossover is 1 / (1 - per).
ReportRow report(const RunStats& stats, const SystemParams& p, const ComputeProfile& profile, bool uses_prediction);

}  // namespace tokcom
