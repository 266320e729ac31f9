#pragma once

#include <cstdint>
#include <span>

namespace tokcom {

/// Stage tags for substream derivation. Each stage draws from its own stream
/// so that changing one stage's draw count never shifts another stage.
enum class Purpose : std::uint64_t {
  Source = 1,
  ChannelNoise = 2,
  Interleaver = 3,
  Optimizer = 4,
  Sampling = 5,
  Test = 6,
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Counter-based 64-bit generator: output i is mix64(key + (i+1)*gamma).
///
/// The stream is fully determined by its key; there is no hidden state beyond
/// the counter, so two streams with the same key produce identical sequences
/// on every platform. Keys for independent purposes come from derive().
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t key) : key_(key) {}

  /// Key for the stream (seed, purpose, a, b). Distinct tuples give
  /// statistically independent streams.
  static std::uint64_t derive(std::uint64_t seed, Purpose purpose, std::uint64_t a = 0,
                              std::uint64_t b = 0);
  static Rng substream(std::uint64_t seed, Purpose purpose, std::uint64_t a = 0,
                       std::uint64_t b = 0) {
    return Rng(derive(seed, purpose, a, b));
  }

  std::uint64_t next() {
    ++counter_;
    return mix64(key_ + counter_ * kGamma);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; the paired value is cached.
  double normal();

  /// Index drawn from an unnormalized cumulative table (last entry = total).
  std::size_t pick_cumulative(std::span<const double> cdf);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace tokcom
