#include "tokcom/metrics.hpp"

#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tokcom/tokens.hpp"

namespace tokcom {

void SystemParams::validate() const {
  if (height == 0 || width == 0 || tokens == 0 || tokens_per_packet == 0)
    throw std::invalid_argument("image size, token count and packet size must be positive");
  if (q < 2) throw std::invalid_argument("codebook size must be >= 2");
  if (!(code_rate > 0.0 && code_rate <= 1.0)) throw std::invalid_argument("code_rate must lie in (0, 1]");
  if (mod_order < 2 || !std::has_single_bit(mod_order)) throw std::invalid_argument("mod_order must be a power of two");
  if (!(bandwidth_hz > 0.0)) throw std::invalid_argument("bandwidth_hz must be positive");
}

void ComputeProfile::validate() const {
  if (!(workload_tflops >= 0.0) || !(device_tops > 0.0) || !(precision_factor > 0.0))
    throw std::invalid_argument("compute profile values must be positive");
}

double tce(const SystemParams& p, double retx) {
  p.validate();
  if (!(retx >= 1.0)) throw std::invalid_argument("retransmission count must be >= 1");
  return static_cast<double>(p.pixels()) / (retx * p.tokens * std::log2(static_cast<double>(p.q)));
}

double bpp(const SystemParams& p, double retx) { return 1.0 / tce(p, retx); }

Ratio tce_exact(const SystemParams& p, std::uint64_t t_num, std::uint64_t t_den) {
  p.validate();
  if (!std::has_single_bit(p.q)) throw std::invalid_argument("tce_exact needs a power-of-two codebook");
  if (t_den == 0 || t_num < t_den) throw std::invalid_argument("retransmission count must be >= 1");
  Ratio r{p.pixels() * t_den, t_num * p.tokens * ceil_log2(p.q)};
  const std::uint64_t g = std::gcd(r.num, r.den);
  r.num /= g;
  r.den /= g;
  return r;
}

double expected_retx(double per) {
  if (!(per >= 0.0 && per < 1.0)) throw std::invalid_argument("PER must lie in [0, 1)");
  return 1.0 / (1.0 - per);
}

double transmitted_bits(const SystemParams& p, bool include_overhead) {
  p.validate();
  double bits = static_cast<double>(p.tokens) * ceil_log2(p.q);
  if (include_overhead) {
    const std::uint64_t packets = (p.tokens + p.tokens_per_packet - 1) / p.tokens_per_packet;
    bits += static_cast<double>(packets) * (p.crc_bits + (p.constraint_length - 1));
  }
  return bits;
}

double comm_time(const SystemParams& p, double retx, bool include_overhead) {
  if (!(retx >= 1.0)) throw std::invalid_argument("retransmission count must be >= 1");
  const double symbols = transmitted_bits(p, include_overhead) / (p.code_rate * std::log2(p.mod_order));
  return retx * symbols / p.bandwidth_hz;
}

double compute_time(const ComputeProfile& profile) {
  profile.validate();
  return profile.workload_tflops * profile.precision_factor / profile.device_tops;
}

bool prediction_pays_off(const SystemParams& p, double retx, const ComputeProfile& profile) {
  const double saved = comm_time(p, retx) - comm_time(p, 1.0);
  return saved > compute_time(profile);
}

ReportRow report(const RunStats& stats, const SystemParams& p, const ComputeProfile& profile, bool uses_prediction) {
  ReportRow row;
  row.per = stats.per;
  row.ter_before = stats.ter_before;
  row.ter_after = stats.ter_after;
  row.t_avg = stats.t_avg;
  row.tce = tce(p, stats.t_avg);
  row.bpp = bpp(p, stats.t_avg);
  row.comm_time_ms = comm_time(p, stats.t_avg) * 1e3;
  row.comm_time_overhead_ms = comm_time(p, stats.t_avg, true) * 1e3;
  row.compute_time_ms = uses_prediction ? compute_time(profile) * 1e3 : 0.0;
  row.crossover = stats.per < 1.0 && prediction_pays_off(p, expected_retx(stats.per), profile);
  return row;
}

}  // namespace tokcom
