#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "tokcom/entropy_coding.hpp"
#include "tokcom/rng.hpp"

using namespace tokcom;

TEST_CASE("entropy: quantized tables sum to the total with no zero entries") {
  Rng r(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t q = 2 + r.below(3000);
    std::vector<double> p(q);
    for (auto& v : p) v = r.bernoulli(0.3) ? 0.0 : r.uniform();
    p[0] += 1e-3;
    const double z = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= z;
    const auto f = quantize_pmf(p);
    REQUIRE(f.cum.back() == kProbTotal);
    for (std::size_t i = 0; i < q; ++i) {
      REQUIRE(f.freq[i] >= 1);
      REQUIRE(f.cum[i + 1] - f.cum[i] == f.freq[i]);
    }
  }
}

TEST_CASE("entropy: point-mass model codes a constant sequence in a few bits") {
  std::vector<double> p(16, 0.0);
  p[5] = 1.0;
  const UnigramModel m(p);
  const TokenSequence seq(16, std::vector<TokenId>(10000, 5));
  const auto bits = ac_encode(m, seq);
  CHECK(bits.length() <= 32);
  CHECK(ac_decode(m, bits, seq.size()) == seq);
}

TEST_CASE("entropy: uniform model is incompressible") {
  const UniformModel m(1024);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto seq = generate(MarkovSource::uniform(1024), 256, {}, s);
    const auto bits = ac_encode(m, seq);
    CHECK(bits.length() >= 2560);
    CHECK(bits.length() <= 2592);
  }
}

TEST_CASE("entropy: coded rate of a binary sticky chain approaches its entropy rate") {
  const auto src = MarkovSource::sticky(2, 0.9);
  const auto m = MarkovModel::exact(src, MarkovModel::Direction::Forward);
  const auto seq = generate(src, 100000, {}, 2);
  const double rate = static_cast<double>(ac_encode(m, seq).length()) / seq.size();
  MESSAGE("rate " << rate);
  CHECK(std::abs(rate / entropy_rate(src) - 1.0) < 0.01);
}

TEST_CASE("entropy: round trip under random smoothed models") {
  Rng r(77);
  for (std::uint64_t t = 0; t < 1000; ++t) {
    const std::uint32_t q = 2 + static_cast<std::uint32_t>(r.below(200));
    const unsigned order = 1 + static_cast<unsigned>(r.below(2));
    const double alpha = 0.01 + r.uniform() * 2.0;
    const auto train_src = MarkovSource::sticky(q, r.uniform());
    const std::vector<TokenSequence> corpus{generate(train_src, 300, {}, t)};
    const auto m = train_markov(corpus, order, alpha);
    const auto seq = generate(MarkovSource::sticky(q, r.uniform()), 1 + r.below(300), {}, 5000 + t);
    const auto bits = ac_encode(*m, seq);
    REQUIRE(ac_decode(*m, bits, seq.size()) == seq);
  }
}

TEST_CASE("entropy: decoding with another model does not reproduce the input") {
  const auto src = MarkovSource::sticky(32, 0.8);
  const auto good = MarkovModel::exact(src, MarkovModel::Direction::Forward);
  const UniformModel other(32);
  bool differs = false;
  for (std::uint64_t s = 0; s < 20 && !differs; ++s) {
    const auto seq = generate(src, 100, {}, s);
    const auto bits = ac_encode(good, seq);
    try {
      differs = !(ac_decode(other, bits, seq.size()) == seq);
    } catch (const FormatError&) {
      differs = true;
    }
  }
  CHECK(differs);
}

TEST_CASE("entropy: truncated streams are rejected") {
  const auto src = MarkovSource::sticky(64, 0.7);
  const auto m = MarkovModel::exact(src, MarkovModel::Direction::Forward);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto seq = generate(src, 200, {}, s);
    const auto bits = ac_encode(m, seq);
    for (std::uint64_t cut = 1; cut <= bits.length(); ++cut)
      REQUIRE_THROWS_AS(ac_decode(m, bits.prefix(bits.length() - cut), seq.size()), FormatError);
  }
}

TEST_CASE("entropy: container round trip keeps the no-label sentinel") {
  CompressedFile f;
  f.q = 1024;
  f.n = 3;
  f.payload = ac_encode(UniformModel(1024), TokenSequence(1024, {1, 2, 3}));
  const auto back = CompressedFile::decode(f.encode());
  CHECK(back.side_label == CompressedFile::kNoLabel);
  CHECK(back.payload == f.payload);
  CHECK(back.q == 1024);
  auto bytes = f.encode();
  bytes.pop_back();
  CHECK_THROWS_AS(CompressedFile::decode(bytes), FormatError);
}

TEST_CASE("entropy: keep fraction one drops nothing") {
  const auto src = MarkovSource::sticky(16, 0.9);
  const auto bi = exact_bidirectional(src);
  const auto seq = generate(src, 64, {}, 1);
  CHECK(drop_tokens(*bi, seq, {}, 1.0).masked_count() == 0);
  CHECK(drop_tokens(*bi, seq, {}, 0.5).masked_count() == 32);
}

TEST_CASE("entropy: constant sequence is recovered after dropping half") {
  std::vector<double> p(16, 0.0);
  p[9] = 1.0;
  const auto src = MarkovSource::iid(p);
  const auto bi = exact_bidirectional(src);
  const auto seq = generate(src, 64, {}, 1);
  const auto masked = drop_tokens(*bi, seq, {}, 0.5);
  CHECK(masked.masked_count() == 32);
  CHECK(fill(*bi, masked, {}).tokens == seq);
}

TEST_CASE("entropy: predictability-based dropping beats random dropping") {
  const auto src = MarkovSource::sticky(16, 0.9);
  const auto bi = exact_bidirectional(src);
  const std::size_t n = 50;
  std::size_t right_sel = 0, right_rand = 0;
  for (std::uint64_t t = 0; t < 10000; ++t) {
    const auto seq = generate(src, n, {}, t);
    const auto sel = drop_tokens(*bi, seq, {}, 0.8);
    MaskedSequence rnd(seq);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng r = Rng::substream(t, Purpose::Test);
    for (std::size_t i = 0; i < sel.masked_count(); ++i) std::swap(idx[i], idx[i + r.below(n - i)]);
    for (std::size_t i = 0; i < sel.masked_count(); ++i) rnd.mask(idx[i]);
    const auto a = fill(*bi, sel, {});
    const auto b = fill(*bi, rnd, {});
    for (std::size_t i = 0; i < n; ++i) {
      right_sel += a.tokens[i] == seq[i];
      right_rand += b.tokens[i] == seq[i];
    }
  }
  MESSAGE("selected " << right_sel << " random " << right_rand);
  CHECK(right_sel >= right_rand);
}
