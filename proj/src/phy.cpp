#include "tokcom/phy.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "tokcom/rng.hpp"
#include "tokcom/simd.hpp"

namespace tokcom {

// --- CRC ------------------------------------------------------------------

std::uint16_t crc16(std::span<const std::uint8_t> bits) {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t b : bits) {
    const bool feedback = ((crc >> 15) & 1u) != (b & 1u);
    crc = static_cast<std::uint16_t>(crc << 1);
    if (feedback) crc ^= 0x1021;
  }
  return crc;
}

Bits crc_append(std::span<const std::uint8_t> payload) {
  if (payload.empty()) throw std::invalid_argument("crc_append: empty payload");
  Bits out(payload.begin(), payload.end());
  const std::uint16_t crc = crc16(payload);
  for (int i = 15; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((crc >> i) & 1u));
  return out;
}

CrcResult crc_check(std::span<const std::uint8_t> bits) {
  if (bits.size() < 17) throw std::invalid_argument("crc_check: need at least 17 bits");
  const auto payload = bits.first(bits.size() - 16);
  std::uint16_t received = 0;
  for (std::uint8_t b : bits.last(16)) received = static_cast<std::uint16_t>((received << 1) | (b & 1u));
  return {crc16(payload) == received, Bits(payload.begin(), payload.end())};
}

// --- Convolutional code ---------------------------------------------------

ConvCode::ConvCode(unsigned k, std::uint32_t g0, std::uint32_t g1) : constraint_length(k), polys{g0, g1} {
  if (k < 2 || k > 16) throw std::invalid_argument("constraint length must be in [2, 16]");
  const std::uint32_t limit = 1u << k;
  const std::uint32_t top = 1u << (k - 1);
  if (g0 >= limit || g1 >= limit) throw std::invalid_argument("generator polynomial wider than K bits");
  const bool spans = ((g0 & top) && (g0 & 1u)) || ((g1 & top) && (g1 & 1u));
  if (!spans) throw std::invalid_argument("no generator has both its top and bottom bit set");
}

ConvCode ConvCode::from_octal(unsigned k, const std::string& g0, const std::string& g1) {
  auto parse = [](const std::string& s) {
    std::size_t used = 0;
    const unsigned long v = std::stoul(s, &used, 8);
    if (used != s.size()) throw std::invalid_argument("bad octal generator '" + s + "'");
    return static_cast<std::uint32_t>(v);
  };
  return ConvCode(k, parse(g0), parse(g1));
}

Bits conv_encode(const ConvCode& code, std::span<const std::uint8_t> bits) {
  if (bits.empty()) throw std::invalid_argument("conv_encode: empty input");
  const unsigned m = code.memory();
  Bits out;
  out.reserve(code.coded_length(bits.size()));
  std::uint32_t state = 0;
  auto step = [&](std::uint32_t b) {
    const std::uint32_t reg = (b << m) | state;
    out.push_back(static_cast<std::uint8_t>(std::popcount(reg & code.polys[0]) & 1));
    out.push_back(static_cast<std::uint8_t>(std::popcount(reg & code.polys[1]) & 1));
    state = reg >> 1;
  };
  for (std::uint8_t b : bits) step(b & 1u);
  for (unsigned i = 0; i < m; ++i) step(0);
  return out;
}

namespace {

// Branch-metric signs laid out for the butterfly kernel.
struct TrellisSigns {
  std::vector<double> a[2][2], b[2][2];
  simd::AcsSigns view{};

  explicit TrellisSigns(const ConvCode& code) {
    const std::size_t half = code.states() / 2;
    const unsigned m = code.memory();
    for (int hb = 0; hb < 2; ++hb)
      for (int par = 0; par < 2; ++par) {
        a[hb][par].resize(half);
        b[hb][par].resize(half);
        for (std::size_t j = 0; j < half; ++j) {
          const auto reg = (static_cast<std::uint32_t>(hb) << m) | static_cast<std::uint32_t>(2 * j + par);
          a[hb][par][j] = (std::popcount(reg & code.polys[0]) & 1) ? -1.0 : 1.0;
          b[hb][par][j] = (std::popcount(reg & code.polys[1]) & 1) ? -1.0 : 1.0;
        }
        view.sign_a[hb][par] = a[hb][par].data();
        view.sign_b[hb][par] = b[hb][par].data();
      }
  }
};

}  // namespace

Bits viterbi_decode(const ConvCode& code, std::span<const double> llrs) {
  const unsigned m = code.memory();
  if (llrs.size() % 2 != 0 || llrs.size() / 2 <= m)
    throw std::invalid_argument("viterbi_decode: LLR count must be 2 * (message length + K - 1)");
  const std::size_t steps = llrs.size() / 2;
  const std::size_t nstates = code.states();
  const std::size_t half = nstates / 2;
  const TrellisSigns signs(code);
  const auto& kern = simd::kernels();

  std::vector<double> pm(nstates, -std::numeric_limits<double>::infinity()), next(nstates);
  pm[0] = 0.0;
  std::vector<std::uint8_t> decisions(steps * nstates);
  for (std::size_t t = 0; t < steps; ++t) {
    kern.acs_step(pm.data(), next.data(), decisions.data() + t * nstates, signs.view, llrs[2 * t], llrs[2 * t + 1], half);
    pm.swap(next);
  }

  Bits bits(steps);
  std::size_t s = 0;
  for (std::size_t t = steps; t-- > 0;) {
    const std::uint8_t d = decisions[t * nstates + s];
    bits[t] = static_cast<std::uint8_t>(s >= half);
    s = 2 * (s % half) + d;
  }
  bits.resize(steps - m);
  return bits;
}

// --- Constellation --------------------------------------------------------

Constellation::Constellation(std::vector<Symbol> points, std::vector<std::uint32_t> labels)
    : points_(std::move(points)), labels_(std::move(labels)) {
  bits_ = static_cast<unsigned>(std::countr_zero(points_.size()));
  point_of_label_.assign(points_.size(), points_.size());
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] >= points_.size() || point_of_label_[labels_[i]] != points_.size())
      throw std::invalid_argument("constellation labeling is not a bijection");
    point_of_label_[labels_[i]] = i;
  }
  for (const auto& p : points_) {
    re_.push_back(p.real());
    im_.push_back(p.imag());
  }
}

Constellation Constellation::qam(unsigned order) {
  if (order != 2 && order != 4 && order != 16 && order != 64)
    throw std::invalid_argument("modulation order must be 2, 4, 16 or 64");
  std::vector<Symbol> pts;
  std::vector<std::uint32_t> labels;
  auto gray = [](std::uint32_t i) { return i ^ (i >> 1); };
  if (order == 2) {
    pts = {{-1.0, 0.0}, {1.0, 0.0}};
    labels = {gray(0), gray(1)};
  } else {
    const unsigned half_bits = static_cast<unsigned>(std::countr_zero(order)) / 2;
    const std::uint32_t levels = 1u << half_bits;
    const double scale = 1.0 / std::sqrt(2.0 * (order - 1) / 3.0);
    for (std::uint32_t i = 0; i < levels; ++i)
      for (std::uint32_t qd = 0; qd < levels; ++qd) {
        const double ai = -static_cast<double>(levels - 1) + 2.0 * i;
        const double aq = -static_cast<double>(levels - 1) + 2.0 * qd;
        pts.emplace_back(ai * scale, aq * scale);
        labels.push_back((gray(i) << half_bits) | gray(qd));
      }
  }
  return Constellation(std::move(pts), std::move(labels));
}

Constellation Constellation::psk(unsigned order) {
  if (order < 2 || order > 1024 || !std::has_single_bit(order))
    throw std::invalid_argument("PSK order must be a power of two in [2, 1024]");
  std::vector<Symbol> pts;
  std::vector<std::uint32_t> labels;
  const double step = 2.0 * std::numbers::pi / order;
  for (std::uint32_t i = 0; i < order; ++i) {
    pts.push_back(std::polar(1.0, step * i));
    labels.push_back(i ^ (i >> 1));
  }
  return Constellation(std::move(pts), std::move(labels));
}

Constellation Constellation::relabeled(std::vector<std::uint32_t> label_of_point) const {
  if (label_of_point.size() != points_.size()) throw std::invalid_argument("relabel: wrong label count");
  return Constellation(points_, std::move(label_of_point));
}

std::size_t Constellation::slice(const Symbol& y) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const double d = std::norm(y - points_[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

Modulated modulate(const Constellation& c, std::span<const std::uint8_t> bits) {
  const unsigned k = c.bits_per_symbol();
  Modulated out;
  out.pad_bits = (k - bits.size() % k) % k;
  const std::size_t n = (bits.size() + out.pad_bits) / k;
  out.symbols.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::uint32_t label = 0;
    for (unsigned j = 0; j < k; ++j) {
      const std::size_t i = s * k + j;
      label = (label << 1) | (i < bits.size() ? (bits[i] & 1u) : 0u);
    }
    out.symbols.push_back(c.point_for_label(label));
  }
  return out;
}

double ChannelCfg::noise_var() const { return std::pow(10.0, -snr_db / 10.0); }

std::vector<Symbol> awgn(std::span<const Symbol> symbols, double snr_db, std::uint64_t noise_key) {
  const double sigma = std::sqrt(std::pow(10.0, -snr_db / 10.0) / 2.0);
  Rng rng(noise_key);
  std::vector<Symbol> out;
  out.reserve(symbols.size());
  for (const auto& s : symbols) {
    const double nr = rng.normal();
    const double ni = rng.normal();
    out.emplace_back(s.real() + sigma * nr, s.imag() + sigma * ni);
  }
  return out;
}

std::vector<double> demod_llr(const Constellation& c, std::span<const Symbol> rx, double noise_var) {
  if (!(noise_var > 0.0)) throw std::invalid_argument("demod_llr: noise variance must be > 0");
  std::vector<double> re(rx.size()), im(rx.size());
  for (std::size_t i = 0; i < rx.size(); ++i) {
    re[i] = rx[i].real();
    im[i] = rx[i].imag();
  }
  std::vector<double> out(rx.size() * c.bits_per_symbol());
  simd::kernels().llr_maxlog(re.data(), im.data(), rx.size(), c.re_.data(), c.im_.data(), c.labels_.data(),
                             c.order(), c.bits_per_symbol(), 1.0 / noise_var, kLlrClamp, out.data());
  return out;
}

std::string symbol_trace_csv(const Constellation& c, std::span<const Symbol> symbols) {
  std::ostringstream os;
  os.precision(17);
  os << "I,Q,label\n";
  for (const auto& s : symbols) os << s.real() << ',' << s.imag() << ',' << c.label(c.slice(s)) << '\n';
  return os.str();
}

// --- Packet pipeline ------------------------------------------------------

std::size_t packet_symbols(std::size_t payload_bits, const ConvCode& code, unsigned order) {
  const std::size_t coded = code.coded_length(payload_bits + 16);
  const auto k = static_cast<std::size_t>(std::countr_zero(order));
  return (coded + k - 1) / k;
}

PacketRx phy_send_packet(std::span<const std::uint8_t> payload, const ConvCode& code, const Constellation& c,
                         const ChannelCfg& cfg, std::uint64_t packet, std::uint64_t attempt) {
  const Bits framed = crc_append(payload);
  const Bits coded = conv_encode(code, framed);
  const Modulated tx = modulate(c, coded);
  const auto rx = awgn(tx.symbols, cfg.snr_db, Rng::derive(cfg.seed, Purpose::ChannelNoise, packet, attempt));
  auto llrs = demod_llr(c, rx, cfg.noise_var());
  llrs.resize(coded.size());
  const Bits decoded = viterbi_decode(code, llrs);
  auto check = crc_check(decoded);
  return {std::move(check.payload), check.ok, tx.symbols.size()};
}

double q_function(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

}  // namespace tokcom
