#include "tokcom/link.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tokcom/rng.hpp"

namespace tokcom {

// --- Packetization --------------------------------------------------------

PacketPlan make_plan(std::size_t n, std::uint32_t tokens_per_packet, bool interleave, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("make_plan: N must be >= 1");
  if (tokens_per_packet == 0) throw std::invalid_argument("make_plan: P must be >= 1");
  PacketPlan plan{n, tokens_per_packet, interleave, seed, {}};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (interleave) {
    auto rng = Rng::substream(seed, Purpose::Interleaver);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  }
  for (std::size_t start = 0; start < n; start += tokens_per_packet) {
    const std::size_t end = std::min(n, start + tokens_per_packet);
    std::vector<std::size_t> positions(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(positions.begin(), positions.end());
    plan.packets.push_back(std::move(positions));
  }
  return plan;
}

std::vector<Bits> packetize(const TokenSequence& seq, const PacketPlan& plan) {
  if (seq.size() != plan.token_count) throw std::invalid_argument("packetize: plan was built for another length");
  const unsigned width = ceil_log2(seq.q());
  std::vector<Bits> out;
  out.reserve(plan.packets.size());
  for (const auto& positions : plan.packets) {
    Bits bits;
    bits.reserve(positions.size() * width);
    for (std::size_t pos : positions)
      for (unsigned b = width; b-- > 0;) bits.push_back(static_cast<std::uint8_t>((seq[pos] >> b) & 1u));
    out.push_back(std::move(bits));
  }
  return out;
}

std::vector<std::uint32_t> unpack_tokens(std::span<const std::uint8_t> bits, std::size_t count, unsigned bits_per_token) {
  if (bits.size() < count * bits_per_token) throw std::invalid_argument("unpack_tokens: payload too short");
  std::vector<std::uint32_t> out(count, 0);
  for (std::size_t t = 0; t < count; ++t)
    for (unsigned b = 0; b < bits_per_token; ++b) out[t] = (out[t] << 1) | (bits[t * bits_per_token + b] & 1u);
  return out;
}

TokenSequence depacketize(std::span<const Bits> payloads, const PacketPlan& plan, std::uint32_t q) {
  if (payloads.size() != plan.packets.size()) throw std::invalid_argument("depacketize: packet count mismatch");
  const unsigned width = ceil_log2(q);
  std::vector<TokenId> ids(plan.token_count);
  for (std::size_t p = 0; p < payloads.size(); ++p) {
    const auto& positions = plan.packets[p];
    const auto values = unpack_tokens(payloads[p], positions.size(), width);
    for (std::size_t i = 0; i < positions.size(); ++i) ids[positions[i]] = values[i];
  }
  return TokenSequence(q, std::move(ids));
}

// --- MCS ------------------------------------------------------------------

ConvCode code_for(unsigned code_id) {
  switch (code_id) {
    case 0:
      return ConvCode(7, 0171, 0133);
    case 1:
      return ConvCode(3, 07, 05);
    default:
      throw std::invalid_argument("unknown code id " + std::to_string(code_id));
  }
}

double McsEntry::bits_per_symbol() const { return std::log2(static_cast<double>(mod_order)) * 0.5; }

std::string McsEntry::name() const {
  const std::string mod = mod_order == 2 ? "BPSK" : mod_order == 4 ? "QPSK" : std::to_string(mod_order) + "QAM";
  return mod + "/K" + std::to_string(code_for(code_id).constraint_length);
}

McsPolicy::McsPolicy(std::vector<double> snr_edges, std::vector<double> r_edges, std::vector<std::vector<McsEntry>> table)
    : snr_edges_(std::move(snr_edges)), r_edges_(std::move(r_edges)), table_(std::move(table)) {
  if (!std::is_sorted(snr_edges_.begin(), snr_edges_.end()) || !std::is_sorted(r_edges_.begin(), r_edges_.end()))
    throw std::invalid_argument("MCS band edges must be ascending");
  if (table_.size() != snr_edges_.size() + 1) throw std::invalid_argument("MCS table needs one row per SNR band");
  for (const auto& row : table_) {
    if (row.size() != r_edges_.size() + 1) throw std::invalid_argument("MCS table needs one column per predictability band");
    for (std::size_t j = 0; j < row.size(); ++j) {
      code_for(row[j].code_id);
      Constellation::qam(row[j].mod_order);
      if (j > 0 && row[j].bits_per_symbol() < row[j - 1].bits_per_symbol())
        throw std::invalid_argument("MCS table must not get more robust as predictability rises");
    }
  }
}

McsPolicy McsPolicy::default_table() {
  const McsEntry qpsk{4, 0}, qam16{16, 0}, qam64{64, 0};
  return McsPolicy({8.0, 14.0}, {0.5, 0.9},
                   {{qpsk, qpsk, qam16}, {qam16, qam16, qam64}, {qam64, qam64, qam64}});
}

McsPolicy McsPolicy::fixed(McsEntry entry) { return McsPolicy({}, {}, {{entry}}); }

McsEntry McsPolicy::select(double snr_db, double predictability) const {
  if (std::isnan(snr_db) && !snr_edges_.empty()) throw std::invalid_argument("MCS lookup needs a channel SNR");
  if (std::isnan(predictability) && !r_edges_.empty()) throw std::invalid_argument("MCS lookup needs a predictability score");
  const auto band = [](std::span<const double> edges, double v) {
    return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
  };
  const std::size_t i = snr_edges_.empty() ? 0 : band(snr_edges_, snr_db);
  const std::size_t j = r_edges_.empty() ? 0 : band(r_edges_, predictability);
  return table_[i][j];
}

std::vector<double> token_predictability(const ProbModel& model, const TokenSequence& seq, const SideInfo& side) {
  if (model.q() != seq.q()) throw std::invalid_argument("model/codebook mismatch");
  MaskedSequence probe(seq);
  std::vector<double> dist(seq.q()), out(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    probe.mask(i);
    model.masked_dist(probe, i, side, dist);
    out[i] = *std::max_element(dist.begin(), dist.end());
    probe.set(i, seq[i]);
  }
  return out;
}

// --- Channels -------------------------------------------------------------

void PhyChannel::set_labeling(unsigned order, std::vector<std::uint32_t> label_of_point) {
  Constellation::qam(order).relabeled(label_of_point);
  labelings_[order] = std::move(label_of_point);
}

PacketRx PhyChannel::send(std::span<const std::uint8_t> payload, const McsEntry& mcs, std::uint64_t packet,
                          std::uint64_t attempt) const {
  auto constellation = Constellation::qam(mcs.mod_order);
  if (const auto it = labelings_.find(mcs.mod_order); it != labelings_.end())
    constellation = constellation.relabeled(it->second);
  return phy_send_packet(payload, code_for(mcs.code_id), constellation, cfg_, packet, attempt);
}

ForcedPerChannel::ForcedPerChannel(double per, std::uint64_t seed) : per_(per), seed_(seed) {
  if (!(per >= 0.0 && per < 1.0)) throw std::invalid_argument("forced PER must lie in [0, 1)");
}

PacketRx ForcedPerChannel::send(std::span<const std::uint8_t> payload, const McsEntry& mcs, std::uint64_t packet,
                                std::uint64_t attempt) const {
  auto rng = Rng::substream(seed_, Purpose::ChannelNoise, packet, attempt);
  PacketRx rx;
  rx.symbols = packet_symbols(payload.size(), code_for(mcs.code_id), mcs.mod_order);
  rx.crc_ok = !rng.bernoulli(per_);
  if (rx.crc_ok) {
    rx.payload.assign(payload.begin(), payload.end());
  } else {
    rx.payload.resize(payload.size());
    for (auto& b : rx.payload) b = static_cast<std::uint8_t>(rng.next() >> 63);
  }
  return rx;
}

std::unique_ptr<PacketChannel> forced_per_channel(double per, std::uint64_t seed) {
  return std::make_unique<ForcedPerChannel>(per, seed);
}

// --- Transmission ---------------------------------------------------------

ArqPolicy ArqPolicy::selective(double threshold, unsigned max_rounds) {
  ArqPolicy p{Kind::SelectiveRetx, threshold, max_rounds};
  p.validate();
  return p;
}

void ArqPolicy::validate() const {
  if (kind == Kind::SelectiveRetx) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("selective threshold must lie in (0, 1)");
    if (max_rounds < 1) throw std::invalid_argument("selective max_rounds must be >= 1");
  }
  if (max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
}

std::string ArqPolicy::name() const {
  switch (kind) {
    case Kind::FullReliable:
      return "full_reliable";
    case Kind::MaskAndPredict:
      return "mask_and_predict";
    case Kind::SelectiveRetx:
      return "selective_retx";
  }
  return "?";
}

double LinkReport::goodput(std::size_t n) const {
  if (symbols == 0) return 0.0;
  return static_cast<double>(n) * (1.0 - stats.ter_after) / static_cast<double>(symbols);
}

namespace {

struct PacketState {
  McsEntry mcs;
  std::uint64_t attempts = 0;
  std::uint64_t failures = 0;
  bool first_ok = false;
  bool delivered = false;
  std::vector<std::uint32_t> first_decoded;
};

}  // namespace

TransmitResult transmit(const TokenSequence& seq, const SideInfo& side, const PacketPlan& plan,
                        const ArqPolicy& policy, const McsPolicy& mcs, const PacketChannel& channel,
                        const ProbModel* model, const TransmitOptions& options) {
  policy.validate();
  const bool predicts = policy.kind != ArqPolicy::Kind::FullReliable;
  const bool adaptive = !mcs.snr_edges().empty() || !mcs.r_edges().empty();
  if ((predicts || adaptive) && model == nullptr) throw std::invalid_argument("transmit: this policy needs a model");
  if (model && model->q() != seq.q()) throw std::invalid_argument("transmit: model/codebook mismatch");

  const auto payloads = packetize(seq, plan);
  const unsigned width = ceil_log2(seq.q());
  const std::size_t n = seq.size();
  std::vector<double> predictability;
  if (adaptive) predictability = token_predictability(*model, seq, side);

  LinkReport rep;
  rep.packets = plan.packets.size();
  std::vector<PacketState> state(rep.packets);
  std::vector<std::uint32_t> received(n, 0);

  auto attempt = [&](std::size_t p) {
    auto& st = state[p];
    const PacketRx rx = channel.send(payloads[p], st.mcs, p, st.attempts);
    ++st.attempts;
    ++rep.transmissions;
    rep.symbols += rx.symbols;
    rep.payload_bits += payloads[p].size();
    if (!rx.crc_ok) ++st.failures;
    const auto values = unpack_tokens(rx.payload, plan.packets[p].size(), width);
    if (st.attempts == 1) {
      st.first_ok = rx.crc_ok;
      st.first_decoded = values;
    }
    if (rx.crc_ok) {
      // A CRC collision can still leave an out-of-range value; treat it as lost.
      const bool in_range = std::all_of(values.begin(), values.end(), [&](std::uint32_t v) { return v < seq.q(); });
      st.delivered = in_range;
      for (std::size_t i = 0; i < values.size(); ++i) received[plan.packets[p][i]] = values[i];
    }
    return st.delivered;
  };

  for (std::size_t p = 0; p < rep.packets; ++p) {
    double r = 0.0;
    if (adaptive) {
      for (std::size_t pos : plan.packets[p]) r += predictability[pos];
      r /= static_cast<double>(plan.packets[p].size());
    }
    state[p].mcs = adaptive ? mcs.select(channel.snr_db(), r) : mcs.select(0.0, 0.0);
    attempt(p);
  }

  std::size_t ter_before = 0;
  for (std::size_t p = 0; p < rep.packets; ++p)
    for (std::size_t i = 0; i < plan.packets[p].size(); ++i)
      if (state[p].first_decoded[i] != seq[plan.packets[p][i]]) ++ter_before;

  std::vector<TokenId> recovered(n, 0);
  std::vector<double> confidence(n, 1.0);
  std::vector<bool> masked_at_fill(rep.packets, false);

  auto run_fill = [&]() {
    MaskedSequence m(seq.q(), n);
    for (std::size_t p = 0; p < rep.packets; ++p) {
      masked_at_fill[p] = !state[p].delivered;
      if (state[p].delivered)
        for (std::size_t pos : plan.packets[p]) m.set(pos, received[pos]);
    }
    auto filled = fill(*model, m, side, options.fill);
    for (std::size_t i = 0; i < n; ++i) recovered[i] = filled.tokens[i];
    confidence = std::move(filled.confidence);
  };

  if (policy.kind == ArqPolicy::Kind::FullReliable) {
    for (std::size_t p = 0; p < rep.packets; ++p)
      while (!state[p].delivered && state[p].attempts < policy.max_attempts) attempt(p);
    for (std::size_t p = 0; p < rep.packets; ++p) {
      masked_at_fill[p] = !state[p].delivered;
      for (std::size_t i = 0; i < plan.packets[p].size(); ++i) {
        const std::size_t pos = plan.packets[p][i];
        // A packet that exhausted its attempts keeps its first raw decode.
        recovered[pos] = state[p].delivered ? received[pos] : std::min(state[p].first_decoded[i], seq.q() - 1);
      }
    }
  } else {
    run_fill();
    if (policy.kind == ArqPolicy::Kind::SelectiveRetx) {
      for (unsigned round = 0; round < policy.max_rounds; ++round) {
        std::vector<std::size_t> resend;
        for (std::size_t p = 0; p < rep.packets; ++p) {
          if (state[p].delivered) continue;
          const auto& positions = plan.packets[p];
          if (std::any_of(positions.begin(), positions.end(), [&](std::size_t pos) { return confidence[pos] < policy.threshold; }))
            resend.push_back(p);
        }
        if (resend.empty()) break;
        bool changed = false;
        for (std::size_t p : resend) changed = attempt(p) || changed;
        if (changed) run_fill();
      }
    }
  }

  std::size_t ter_after = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (recovered[i] != seq[i]) ++ter_after;
  std::uint64_t failures = 0;
  for (const auto& st : state) failures += st.failures;

  rep.failures = failures;
  rep.token_errors_before = ter_before;
  rep.token_errors_after = ter_after;
  rep.stats.per = static_cast<double>(failures) / static_cast<double>(rep.transmissions);
  rep.stats.ter_before = static_cast<double>(ter_before) / static_cast<double>(n);
  rep.stats.ter_after = static_cast<double>(ter_after) / static_cast<double>(n);
  rep.stats.t_avg = static_cast<double>(rep.transmissions) / static_cast<double>(rep.packets);
  rep.tce = tce(options.params, rep.stats.t_avg);
  rep.bpp = bpp(options.params, rep.stats.t_avg);
  rep.comm_time_s = comm_time(options.params, rep.stats.t_avg);
  rep.air_time_s = static_cast<double>(rep.symbols) / options.bandwidth_hz;
  const bool any_masked = std::any_of(masked_at_fill.begin(), masked_at_fill.end(), [](bool b) { return b; });
  rep.compute_time_s = predicts && any_masked ? compute_time(options.profile) : 0.0;

  if (options.keep_log) {
    for (std::size_t p = 0; p < rep.packets; ++p) {
      PacketLog row;
      row.packet_id = p;
      row.positions = plan.packets[p];
      row.mcs = state[p].mcs;
      row.crc_ok = state[p].first_ok;
      row.retx_count = state[p].attempts - 1;
      row.tokens_decoded = state[p].first_decoded;
      row.masked = masked_at_fill[p] && predicts;
      for (std::size_t pos : plan.packets[p]) {
        row.tokens_sent.push_back(seq[pos]);
        if (row.masked) {
          row.filled_ids.push_back(recovered[pos]);
          row.confidences.push_back(confidence[pos]);
        }
      }
      rep.log.push_back(std::move(row));
    }
  }
  return {TokenSequence(seq.q(), std::move(recovered)), std::move(rep)};
}

std::string packet_log_csv(std::span<const PacketLog> log, const std::string& run_id) {
  auto join = [](const auto& values) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < values.size(); ++i) os << (i ? ";" : "") << values[i];
    return os.str();
  };
  std::ostringstream os;
  os << "run_id,packet_id,positions,mcs,crc_ok,retx_count,tokens_sent,tokens_decoded,masked,filled_ids,confidences\n";
  for (const auto& r : log) {
    os << run_id << ',' << r.packet_id << ',' << join(r.positions) << ',' << r.mcs.name() << ',' << (r.crc_ok ? 1 : 0)
       << ',' << r.retx_count << ',' << join(r.tokens_sent) << ',' << join(r.tokens_decoded) << ','
       << (r.masked ? 1 : 0) << ',' << join(r.filled_ids) << ',' << join(r.confidences) << '\n';
  }
  return os.str();
}

}  // namespace tokcom
