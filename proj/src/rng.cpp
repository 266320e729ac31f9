#include "tokcom/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tokcom {

std::uint64_t Rng::derive(std::uint64_t seed, Purpose purpose, std::uint64_t a, std::uint64_t b) {
  std::uint64_t k = mix64(seed + 0x632BE59BD9B4E019ULL);
  k = mix64(k ^ (static_cast<std::uint64_t>(purpose) * kGamma));
  k = mix64(k ^ mix64(a + 0x8CB92BA72F3D8DD7ULL));
  k = mix64(k ^ mix64(b + 0xD1B54A32D192ED03ULL));
  return k;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(next()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::pick_cumulative(std::span<const double> cdf) {
  const double u = uniform() * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<std::size_t>(it - cdf.begin());
}

}  // namespace tokcom
