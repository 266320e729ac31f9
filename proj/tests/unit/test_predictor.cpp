#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tokcom/predictor.hpp"
#include "tokcom/rng.hpp"
#include "tokcom/tokens.hpp"

using namespace tokcom;

namespace {

std::vector<double> dist_of(const ProbModel& m, const MaskedSequence& s, std::size_t pos) {
  std::vector<double> out(m.q());
  m.masked_dist(s, pos, {}, out);
  return out;
}

// Random row-stochastic q x q matrix with entries bounded away from zero.
std::vector<double> random_chain(std::uint32_t q, std::uint64_t seed) {
  Rng r(seed);
  std::vector<double> a(static_cast<std::size_t>(q) * q);
  for (std::uint32_t i = 0; i < q; ++i) {
    double z = 0.0;
    for (std::uint32_t j = 0; j < q; ++j) z += a[i * q + j] = 0.05 + r.uniform();
    for (std::uint32_t j = 0; j < q; ++j) a[i * q + j] /= z;
  }
  return a;
}

MarkovSource stationary_start(std::vector<double> a, std::uint32_t q) {
  const auto tmp = MarkovSource::order1(a, std::vector<double>(q, 1.0 / q));
  return MarkovSource::order1(std::move(a), stationary_distribution(tmp));
}

}  // namespace

TEST_CASE("predictor: unigram counts with add-one smoothing") {
  const std::vector<TokenSequence> corpus{TokenSequence(2, {0, 0, 1})};
  const auto m = train_unigram(corpus, 2, 1.0);
  CHECK(m->probs()[0] == doctest::Approx(3.0 / 5.0).epsilon(1e-15));
  CHECK(m->probs()[1] == doctest::Approx(2.0 / 5.0).epsilon(1e-15));

  const auto flat = train_unigram(corpus, 2, 1e9);
  CHECK(std::abs(flat->probs()[0] - 0.5) < 1e-3);
  CHECK(std::abs(flat->probs()[1] - 0.5) < 1e-3);
}

TEST_CASE("predictor: unigram estimate converges to the generating law") {
  const std::vector<double> law{0.5, 0.25, 0.125, 0.0625, 0.0625};
  const std::vector<TokenSequence> corpus{generate(MarkovSource::iid(law), 100000, {}, 4)};
  const auto m = train_unigram(corpus, 5, 1.0);
  for (std::size_t i = 0; i < law.size(); ++i) CHECK(std::abs(m->probs()[i] - law[i]) < 0.01);
}

TEST_CASE("predictor: alternating corpus gives a near-deterministic row") {
  std::vector<TokenId> ids(1000);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i % 2;
  const std::vector<TokenSequence> corpus{TokenSequence(2, ids)};
  const auto m = train_markov(corpus, 1, 0.01);
  std::vector<double> out(2);
  const std::vector<TokenId> hist{0};
  m->causal_dist(hist, {}, out);
  CHECK(out[1] >= 0.99);
}

TEST_CASE("predictor: unseen context backs off to the unigram") {
  const std::vector<TokenSequence> corpus{TokenSequence(4, {0, 1, 0, 1, 1, 0})};
  const auto m = train_markov(corpus, 1, 1.0);
  std::vector<double> out(4), marg(4);
  const std::vector<TokenId> hist{3};
  m->causal_dist(hist, {}, out);
  m->marginal({}, marg);
  for (int i = 0; i < 4; ++i) CHECK(out[i] == marg[i]);
  // (n(x)+1)/(6+4)
  CHECK(marg[0] == doctest::Approx(4.0 / 10.0));
  CHECK(marg[3] == doctest::Approx(1.0 / 10.0));
}

TEST_CASE("predictor: learned rows approach the generating chain") {
  const std::uint32_t q = 6;
  const auto a = random_chain(q, 17);
  const auto src = stationary_start(a, q);
  const std::vector<TokenSequence> corpus{generate(src, 200000, {}, 5)};
  const auto m = train_markov(corpus, 1, 1.0);
  for (TokenId c = 0; c < q; ++c) {
    const std::vector<TokenId> ctx{c};
    const auto* row = m->row(ctx, {});
    REQUIRE(row != nullptr);
    double tv = 0.0;
    for (std::uint32_t x = 0; x < q; ++x) tv += std::abs((*row)[x] - a[c * q + x]);
    CHECK(tv / 2 < 0.02);
  }
}

TEST_CASE("predictor: counts serialize byte-identically") {
  const std::vector<TokenSequence> corpus{generate(MarkovSource::sticky(16, 0.7), 2000, {}, 1)};
  const auto c = count_markov(corpus, 2, 0.5, MarkovCounts::Direction::Backward);
  const auto text = c.to_json();
  const auto back = MarkovCounts::from_json(text);
  CHECK(back.to_json() == text);
  CHECK(back.contexts == c.contexts);
}

TEST_CASE("predictor: forced left context and flat right context give a point mass") {
  const std::uint32_t q = 5;
  std::vector<double> a(q * q, 0.0);
  for (std::uint32_t i = 0; i < q; ++i) a[i * q + (i + 2) % q] = 1.0;
  const auto src = MarkovSource::order1(a, std::vector<double>(q, 1.0 / q));
  auto fwd = std::make_shared<MarkovModel>(MarkovModel::exact(src, MarkovModel::Direction::Forward));
  auto bwd = std::make_shared<UniformModel>(q);
  for (auto rule : {CombineRule::Bayes, CombineRule::Product}) {
    BidirectionalModel bi(fwd, bwd, rule);
    MaskedSequence s(TokenSequence(q, {1, 3, 0}));
    s.mask(1);
    const auto d = dist_of(bi, s, 1);
    CHECK(d[3] == doctest::Approx(1.0));
  }
}

TEST_CASE("predictor: symmetric chain combines to the normalized square") {
  const std::uint32_t q = 4;
  const auto src = MarkovSource::sticky(q, 0.7);
  const auto bi = exact_bidirectional(src);
  for (TokenId c = 0; c < q; ++c) {
    MaskedSequence s(TokenSequence(q, {c, 0, c}));
    s.mask(1);
    const auto d = dist_of(*bi, s, 1);
    std::vector<double> want(q);
    for (std::uint32_t x = 0; x < q; ++x) want[x] = std::pow(src.row({}, c)[x], 2);
    const double z = std::accumulate(want.begin(), want.end(), 0.0);
    for (std::uint32_t x = 0; x < q; ++x) CHECK(d[x] == doctest::Approx(want[x] / z).epsilon(1e-12));
  }
}

TEST_CASE("predictor: exact bidirectional model equals the one-gap posterior") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const std::uint32_t q = 3 + trial % 7;
    const auto a = random_chain(q, 100 + trial);
    const auto src = MarkovSource::order1(a, std::vector<double>(q, 1.0 / q));
    const auto bi = exact_bidirectional(src);
    Rng r(trial);
    const TokenId l = r.below(q), rt = r.below(q);
    MaskedSequence s(TokenSequence(q, {l, 0, rt}));
    s.mask(1);
    const auto d = dist_of(*bi, s, 1);
    std::vector<double> want(q);
    double z = 0.0;
    for (std::uint32_t x = 0; x < q; ++x) z += want[x] = a[l * q + x] * a[x * q + rt];
    for (std::uint32_t x = 0; x < q; ++x) CHECK(std::abs(d[x] - want[x] / z) < 1e-9);
  }
}

TEST_CASE("predictor: predict requires a masked slot") {
  UniformModel u(8);
  CHECK_THROWS(predict(u, MaskedSequence(TokenSequence(8, {1, 2})), {}));
}

TEST_CASE("predictor: uniform model assigns 1/Q everywhere") {
  UniformModel u(1024);
  MaskedSequence s(1024, 6);
  s.set(2, 77);
  const auto res = predict(u, s, {});
  CHECK(res.positions.size() == 5);
  for (const auto& p : res.positions) {
    const auto full = p.expand(1024);
    for (double v : full) REQUIRE(v == 1.0 / 1024);
  }
}

TEST_CASE("predictor: argmax equals exhaustive chain scoring") {
  const std::uint32_t q = 16;
  const auto a = random_chain(q, 9);
  const auto src = stationary_start(a, q);
  const auto pi = src.tables({}).initial;
  const auto bi = exact_bidirectional(src);
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    const auto seq = generate(src, 10, {}, trial);
    const std::size_t pos = trial % 10;
    MaskedSequence s(seq);
    s.mask(pos);
    double best = -1.0;
    TokenId best_id = 0;
    for (TokenId x = 0; x < q; ++x) {
      std::vector<TokenId> ids(seq.ids().begin(), seq.ids().end());
      ids[pos] = x;
      double lik = pi[ids[0]];
      for (std::size_t i = 1; i < ids.size(); ++i) lik *= a[ids[i - 1] * q + ids[i]];
      if (lik > best) best = lik, best_id = x;
    }
    const auto res = predict(*bi, s, {});
    CHECK(res.positions[0].ids[0] == best_id);
  }
}

TEST_CASE("predictor: distributions are normalized") {
  const auto src = MarkovSource::sticky(64, 0.8);
  const std::vector<TokenSequence> corpus{generate(src, 5000, {}, 2)};
  const auto bi = bidirectional_combine(train_markov(corpus, 2, 0.5), train_markov_reversed(corpus, 2, 0.5));
  Rng r(1);
  for (int t = 0; t < 100; ++t) {
    MaskedSequence s(generate(src, 20, {}, 100 + t));
    for (std::size_t i = 0; i < 20; ++i)
      if (r.bernoulli(0.4)) s.mask(i);
    if (s.masked_count() == 0) s.mask(0);
    for (const auto& p : predict(*bi, s, {}).positions) {
      const double z = std::accumulate(p.probs.begin(), p.probs.end(), 0.0) + p.residual;
      CHECK(z == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("predictor: top-k truncation keeps the head and the residual") {
  const std::vector<double> d{0.1, 0.4, 0.2, 0.2, 0.1};
  const auto p = truncate_top_k(d, 0, 2, Evidence::Both);
  CHECK(p.ids == std::vector<TokenId>{1, 2});
  CHECK(p.residual == doctest::Approx(0.4));
  const auto full = p.expand(5);
  CHECK(full[1] == doctest::Approx(0.4));
  CHECK(full[0] == doctest::Approx(0.4 / 3));
}

TEST_CASE("predictor: fill schedules") {
  const auto c = FillSchedule::cosine(8);
  CHECK(c.iterations() == 8);
  CHECK(c.cumulative().back() == 1.0);
  CHECK(c.cumulative()[3] == doctest::Approx(1 - std::cos(std::acos(-1.0) / 4)));
  CHECK_THROWS(FillSchedule({0.5, 0.4, 1.0}));
  CHECK_THROWS(FillSchedule({0.5}));
  CHECK_THROWS(FillSchedule::cosine(0));
  const FillSchedule half({0.5, 1.0});
  CHECK(half.revealed_after(0, 4) == 2);
  CHECK(half.revealed_after(1, 4) == 4);
}

TEST_CASE("predictor: single-mask fill equals argmax prediction") {
  const auto src = MarkovSource::sticky(32, 0.6);
  const auto bi = exact_bidirectional(src);
  for (std::uint64_t t = 0; t < 20; ++t) {
    MaskedSequence s(generate(src, 12, {}, t));
    s.mask(t % 12);
    FillOptions opt;
    opt.schedule = FillSchedule::single();
    const auto f = fill(*bi, s, {}, opt);
    CHECK(f.tokens[t % 12] == predict(*bi, s, {}).positions[0].ids[0]);
  }
}

TEST_CASE("predictor: two-step schedule commits two then two") {
  const auto src = MarkovSource::sticky(8, 0.9);
  const auto bi = exact_bidirectional(src);
  MaskedSequence s(generate(src, 10, {}, 3));
  for (std::size_t i : {1, 3, 5, 7}) s.mask(i);
  FillOptions opt;
  opt.schedule = FillSchedule({0.5, 1.0});
  const auto f = fill(*bi, s, {}, opt);
  CHECK(f.commits_per_iteration == std::vector<std::size_t>{2, 2});
  CHECK(f.confidence[0] == 1.0);
}

TEST_CASE("predictor: iterative fill is at least as accurate as single-shot") {
  const auto src = MarkovSource::sticky(2, 0.9);
  const auto bi = exact_bidirectional(src);
  std::size_t right_iter = 0, right_single = 0, total = 0;
  FillOptions single;
  single.schedule = FillSchedule::single();
  for (std::uint64_t t = 0; t < 10000; ++t) {
    const auto seq = generate(src, 50, {}, t);
    MaskedSequence s(seq);
    Rng r = Rng::substream(t, Purpose::Test);
    for (std::size_t i = 0; i < seq.size(); ++i)
      if (r.bernoulli(0.2)) s.mask(i);
    if (s.masked_count() == 0) continue;
    const auto a = fill(*bi, s, {});
    const auto b = fill(*bi, s, {}, single);
    for (std::size_t i : s.masked_positions()) {
      right_iter += a.tokens[i] == seq[i];
      right_single += b.tokens[i] == seq[i];
      ++total;
    }
  }
  MESSAGE("iterative " << double(right_iter) / total << " single " << double(right_single) / total);
  CHECK(right_iter >= right_single);
}

TEST_CASE("predictor: sampling fill is a pure function of the seed") {
  const auto src = MarkovSource::sticky(64, 0.5);
  const auto bi = exact_bidirectional(src);
  MaskedSequence s(generate(src, 40, {}, 3));
  for (std::size_t i = 0; i < 40; i += 3) s.mask(i);
  FillOptions opt;
  opt.mode = FillOptions::Mode::Sample;
  opt.seed = 12;
  CHECK(fill(*bi, s, {}, opt).tokens == fill(*bi, s, {}, opt).tokens);
}

TEST_CASE("predictor: cross entropy") {
  const auto uni = MarkovSource::uniform(1024);
  CHECK(cross_entropy(UniformModel(1024), generate(uni, 500, {}, 1)) == 10.0);

  std::vector<double> p(4, 0.0);
  p[2] = 1.0;
  CHECK(cross_entropy(UnigramModel(p), TokenSequence(4, {2, 2, 2, 2})) == 0.0);

  const auto a = random_chain(8, 33);
  const auto src = stationary_start(a, 8);
  const auto m = MarkovModel::exact(src, MarkovModel::Direction::Forward);
  const double h = entropy_rate(src);
  CHECK(std::abs(cross_entropy(m, generate(src, 100000, {}, 8)) / h - 1.0) < 0.01);
}
