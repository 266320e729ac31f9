#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "tokcom/rng.hpp"

using tokcom::Purpose;
using tokcom::Rng;

TEST_CASE("rng: matches the SplitMix64 reference stream") {
  // Reference outputs of splitmix64 seeded with 0.
  Rng r(0);
  CHECK(r.next() == 0xE220A8397B1DCDAFULL);
  CHECK(r.next() == 0x6E789E6AA1B965F4ULL);
  CHECK(r.next() == 0x06C45D188009454FULL);
}

TEST_CASE("rng: equal keys give equal streams") {
  Rng a(Rng::derive(42, Purpose::ChannelNoise, 3, 1));
  Rng b(Rng::derive(42, Purpose::ChannelNoise, 3, 1));
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next() == b.next());
}

TEST_CASE("rng: derived keys are distinct across tuples") {
  std::set<std::uint64_t> keys;
  for (std::uint64_t seed = 0; seed < 4; ++seed)
    for (auto p : {Purpose::Source, Purpose::ChannelNoise, Purpose::Interleaver, Purpose::Optimizer,
                   Purpose::Sampling, Purpose::Test})
      for (std::uint64_t a = 0; a < 8; ++a)
        for (std::uint64_t b = 0; b < 8; ++b) keys.insert(Rng::derive(seed, p, a, b));
  CHECK(keys.size() == 4u * 6u * 8u * 8u);
}

TEST_CASE("rng: uniform and below moments") {
  Rng r(7);
  const int n = 1'000'000;
  double sum = 0.0;
  std::vector<int> hist(10);
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    ++hist[r.below(10)];
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.005));
  for (int c : hist) CHECK(std::abs(c - n / 10) < 2000);
  CHECK(r.below(1) == 0);
}

TEST_CASE("rng: normal has zero mean and unit variance") {
  Rng r(11);
  const int n = 1'000'000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.005);
  CHECK(std::abs(s2 / n - 1.0) < 0.01);
}

TEST_CASE("rng: pick_cumulative follows weights") {
  Rng r(5);
  const std::vector<double> cdf{1.0, 1.0, 4.0};  // weights 1, 0, 3
  std::vector<int> hist(3);
  for (int i = 0; i < 100000; ++i) ++hist[r.pick_cumulative(cdf)];
  CHECK(hist[1] == 0);
  CHECK(hist[0] / 100000.0 == doctest::Approx(0.25).epsilon(0.03));
}
