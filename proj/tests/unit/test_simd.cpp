#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "tokcom/phy.hpp"
#include "tokcom/predictor.hpp"
#include "tokcom/rng.hpp"
#include "tokcom/simd.hpp"

using namespace tokcom;
using simd::Isa;

namespace {

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct IsaGuard {
  Isa saved = simd::active_isa();
  ~IsaGuard() { simd::set_active_isa(saved); }
};

std::vector<Isa> isas() {
  std::vector<Isa> v{Isa::Scalar};
  if (simd::isa_available(Isa::Avx2)) v.push_back(Isa::Avx2);
  return v;
}

}  // namespace

TEST_CASE("simd: scalar max-log kernel matches a direct evaluation") {
  const auto c = Constellation::qam(16);
  std::vector<double> pre, pim;
  for (const auto& p : c.points()) pre.push_back(p.real()), pim.push_back(p.imag());
  Rng r(1);
  const std::size_t n = 37;
  std::vector<double> yre(n), yim(n), out(n * 4);
  for (std::size_t i = 0; i < n; ++i) yre[i] = 2 * r.uniform() - 1, yim[i] = 2 * r.uniform() - 1;
  simd::kernels(Isa::Scalar)
      .llr_maxlog(yre.data(), yim.data(), n, pre.data(), pim.data(), c.labels().data(), 16, 4, 2.0, 50.0, out.data());
  for (std::size_t i = 0; i < n; ++i)
    for (unsigned k = 0; k < 4; ++k) {
      double d0 = 1e300, d1 = 1e300;
      for (std::size_t s = 0; s < 16; ++s) {
        const double d = (yre[i] - pre[s]) * (yre[i] - pre[s]) + (yim[i] - pim[s]) * (yim[i] - pim[s]);
        if ((c.label(s) >> (3 - k)) & 1)
          d1 = std::min(d1, d);
        else
          d0 = std::min(d0, d);
      }
      CHECK(out[i * 4 + k] == doctest::Approx(std::clamp((d1 - d0) * 2.0, -50.0, 50.0)).epsilon(1e-12));
    }
}

TEST_CASE("simd: max-log kernels are bit-identical across ISAs") {
  Rng r(2);
  for (unsigned m : {2u, 4u, 16u, 64u}) {
    const auto c = Constellation::qam(m);
    const unsigned b = c.bits_per_symbol();
    std::vector<double> pre, pim;
    for (const auto& p : c.points()) pre.push_back(p.real()), pim.push_back(p.imag());
    for (std::size_t n : {1u, 3u, 4u, 5u, 17u, 64u, 1001u}) {
      std::vector<double> yre(n), yim(n);
      for (std::size_t i = 0; i < n; ++i) yre[i] = 3 * r.normal(), yim[i] = 3 * r.normal();
      std::vector<std::vector<double>> outs;
      for (Isa isa : isas()) {
        std::vector<double> out(n * b);
        simd::kernels(isa).llr_maxlog(yre.data(), yim.data(), n, pre.data(), pim.data(), c.labels().data(), m, b,
                                      7.3, 50.0, out.data());
        outs.push_back(out);
      }
      for (std::size_t k = 1; k < outs.size(); ++k) REQUIRE(same_bits(outs[0], outs[k]));
    }
  }
}

TEST_CASE("simd: add-compare-select kernels are bit-identical across ISAs") {
  Rng r(3);
  for (std::size_t half : {1u, 2u, 4u, 8u, 32u, 128u}) {
    std::vector<std::vector<double>> sa(4, std::vector<double>(half)), sb(4, std::vector<double>(half));
    simd::AcsSigns signs{};
    for (int i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < half; ++j) {
        sa[i][j] = r.bernoulli(0.5) ? 1.0 : -1.0;
        sb[i][j] = r.bernoulli(0.5) ? 1.0 : -1.0;
      }
      signs.sign_a[i / 2][i % 2] = sa[i].data();
      signs.sign_b[i / 2][i % 2] = sb[i].data();
    }
    std::vector<double> pm(2 * half);
    for (auto& v : pm) v = r.bernoulli(0.2) ? -std::numeric_limits<double>::infinity() : std::round(r.normal() * 4);
    for (double la : {0.0, 1.5, -2.25, 50.0}) {
      std::vector<std::vector<double>> outs;
      std::vector<std::vector<std::uint8_t>> decs;
      for (Isa isa : isas()) {
        std::vector<double> out(2 * half);
        std::vector<std::uint8_t> dec(2 * half);
        simd::kernels(isa).acs_step(pm.data(), out.data(), dec.data(), signs, la, -0.75, half);
        outs.push_back(out);
        decs.push_back(dec);
      }
      // Reference evaluation of the first output.
      for (std::size_t j = 0; j < half; ++j)
        for (int hb = 0; hb < 2; ++hb) {
          const double e = pm[2 * j] + signs.sign_a[hb][0][j] * la + signs.sign_b[hb][0][j] * -0.75;
          const double o = pm[2 * j + 1] + signs.sign_a[hb][1][j] * la + signs.sign_b[hb][1][j] * -0.75;
          CHECK(outs[0][j + hb * half] == std::max(e, o));
          CHECK(decs[0][j + hb * half] == (o > e ? 1 : 0));
        }
      for (std::size_t k = 1; k < outs.size(); ++k) {
        REQUIRE(same_bits(outs[0], outs[k]));
        REQUIRE(decs[0] == decs[k]);
      }
    }
  }
}

TEST_CASE("simd: weighted product kernels are bit-identical across ISAs") {
  Rng r(4);
  for (std::size_t n : {1u, 3u, 4u, 7u, 1024u, 1027u}) {
    std::vector<double> a(n), b(n), w(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = r.uniform(), b[i] = r.uniform() * 1e-200, w[i] = 1.0 / (r.uniform() + 1e-3);
    std::vector<std::vector<double>> outs;
    for (Isa isa : isas()) {
      std::vector<double> out(n);
      simd::kernels(isa).weighted_product(a.data(), b.data(), w.data(), n, out.data());
      outs.push_back(out);
    }
    for (std::size_t i = 0; i < n; ++i) CHECK(outs[0][i] == (a[i] * b[i]) * w[i]);
    for (std::size_t k = 1; k < outs.size(); ++k) REQUIRE(same_bits(outs[0], outs[k]));
  }
}

TEST_CASE("simd: decoding and prediction agree across ISAs") {
  IsaGuard guard;
  const auto c = Constellation::qam(64);
  ChannelCfg cfg;
  cfg.snr_db = 9.0;
  Rng r(5);
  Bits payload(40);
  for (auto& v : payload) v = r.below(2);
  const auto src = MarkovSource::sticky(1024, 0.9);
  const auto bi = exact_bidirectional(src);
  MaskedSequence ms(generate(src, 64, {}, 1));
  for (std::size_t i = 0; i < 64; i += 5) ms.mask(i);

  std::vector<std::vector<std::uint8_t>> decoded;
  std::vector<std::vector<double>> probs;
  for (Isa isa : isas()) {
    simd::set_active_isa(isa);
    std::vector<std::uint8_t> d;
    for (std::uint64_t p = 0; p < 200; ++p) {
      const auto rx = phy_send_packet(payload, ConvCode{}, c, cfg, p);
      d.insert(d.end(), rx.payload.begin(), rx.payload.end());
      d.push_back(rx.crc_ok);
    }
    decoded.push_back(d);
    std::vector<double> pr;
    for (const auto& pos : predict(*bi, ms, {}).positions) pr.insert(pr.end(), pos.probs.begin(), pos.probs.end());
    probs.push_back(pr);
  }
  for (std::size_t k = 1; k < decoded.size(); ++k) {
    CHECK(decoded[0] == decoded[k]);
    CHECK(same_bits(probs[0], probs[k]));
  }
}

TEST_CASE("simd: isa names and availability") {
  CHECK(simd::isa_name(Isa::Scalar) == "scalar");
  CHECK(simd::isa_available(Isa::Scalar));
  MESSAGE("active isa: " << simd::isa_name(simd::active_isa()));
}
