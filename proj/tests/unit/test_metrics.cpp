#include <doctest.h>

#include <cmath>

#include "tokcom/metrics.hpp"

using namespace tokcom;

TEST_CASE("metrics: efficiency at the reference operating point") {
  const SystemParams p;
  CHECK(tce(p, 1.0) == doctest::Approx(25.6).epsilon(1e-15));
  CHECK(bpp(p, 1.0) == doctest::Approx(0.0390625).epsilon(1e-15));
  CHECK(std::abs(bpp(p, 1.0) - 0.039) < 5e-4);
  CHECK(tce(p, 2.0) == doctest::Approx(12.8).epsilon(1e-15));
  CHECK(tce_exact(p, 1, 1) == Ratio{128, 5});
  CHECK(tce_exact(p, 2, 1) == Ratio{64, 5});
  CHECK(tce_exact(p, 5, 3) == Ratio{384, 25});
}

TEST_CASE("metrics: compact preset rate") {
  SystemParams p;
  p.tokens = 128;
  p.q = 8192;
  CHECK(bpp(p, 1.0) == 128.0 * 13.0 / 65536.0);
  CHECK(std::abs(bpp(p, 1.0) - 0.0254) < 5e-5);
}

TEST_CASE("metrics: non power of two codebooks use the literal logarithm") {
  SystemParams p;
  p.q = 1000;
  CHECK(tce(p, 1.0) == doctest::Approx(65536.0 / (256.0 * std::log2(1000.0))));
  CHECK_THROWS(tce_exact(p, 1, 1));
}

TEST_CASE("metrics: expected transmissions") {
  CHECK(expected_retx(0.0) == 1.0);
  CHECK(expected_retx(0.4) == doctest::Approx(1.0 / 0.6));
  CHECK(std::round(expected_retx(0.4) * 1000) / 1000 == 1.667);
  CHECK(expected_retx(0.5) == 2.0);
  CHECK_THROWS(expected_retx(1.0));
  CHECK_THROWS(expected_retx(-0.01));
}

TEST_CASE("metrics: communication time") {
  const SystemParams p;
  CHECK(transmitted_bits(p, false) == 2560.0);
  CHECK(transmitted_bits(p, true) == 2560.0 + 64.0 * (16 + 6));
  CHECK(comm_time(p, 1.0) * 1e3 == doctest::Approx(25.6).epsilon(1e-14));
  const double at6 = comm_time(p, expected_retx(0.4)) * 1e3;
  CHECK(at6 == doctest::Approx(25.6 / 0.6));
  CHECK(std::abs(at6 / 43.7 - 1.0) < 0.03);
  const double at9 = comm_time(p, expected_retx(0.043)) * 1e3;
  CHECK(std::abs(at9 / 26.7 - 1.0) < 0.005);
  CHECK(comm_time(p, 1.0, true) * 1e3 == doctest::Approx(3968.0 / 2.0 / 50.0));
}

TEST_CASE("metrics: predictor compute time") {
  CHECK(compute_time(ComputeProfile::fp4()) * 1e3 == doctest::Approx(19.2).epsilon(1e-14));
  CHECK(std::round(compute_time(ComputeProfile::int8()) * 1e4) / 10 == 34.9);
  CHECK(compute_time({0.0, 1000.0, 24.0}) == 0.0);
}

TEST_CASE("metrics: prediction break-even") {
  const SystemParams p;
  const auto fp4 = ComputeProfile::fp4();
  CHECK_FALSE(prediction_pays_off(p, expected_retx(0.0), fp4));
  CHECK_FALSE(prediction_pays_off(p, expected_retx(0.4), fp4));
  CHECK_FALSE(prediction_pays_off(p, expected_retx(0.42), fp4));
  CHECK(prediction_pays_off(p, expected_retx(0.44), fp4));
  CHECK(prediction_pays_off(p, expected_retx(0.6), fp4));
}

TEST_CASE("metrics: report rows keep their inputs") {
  const SystemParams p;
  const RunStats s{0.123456789012345, 0.1, 0.01, 1.0 / 0.876543210987655};
  const auto row = report(s, p, ComputeProfile::fp4(), true);
  CHECK(row.per == s.per);
  CHECK(row.ter_before == s.ter_before);
  CHECK(row.ter_after == s.ter_after);
  CHECK(row.t_avg == s.t_avg);
  CHECK(row.tce == tce(p, s.t_avg));
  CHECK(row.compute_time_ms == compute_time(ComputeProfile::fp4()) * 1e3);
  CHECK_FALSE(row.crossover);
  CHECK(report({0.5, 0, 0, 1.0}, p, ComputeProfile::fp4(), true).crossover);
  CHECK(report({0.0, 0, 0, 1.0}, p, ComputeProfile::fp4(), true).crossover == false);
}

TEST_CASE("metrics: parameter validation") {
  SystemParams p;
  p.q = 1;
  CHECK_THROWS(p.validate());
  p = {};
  p.code_rate = 0.0;
  CHECK_THROWS(p.validate());
  ComputeProfile c;
  c.device_tops = 0.0;
  CHECK_THROWS(c.validate());
}
