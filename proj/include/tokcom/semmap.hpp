#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tokcom/phy.hpp"
#include "tokcom/tokens.hpp"

namespace tokcom {

/// Dense row-major square matrix.
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), v_(n * n, fill) {}

  std::size_t size() const { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return v_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v_[i * n_ + j]; }
  std::span<const double> row(std::size_t i) const { return std::span<const double>(v_).subspan(i * n_, n_); }

 private:
  std::size_t n_ = 0;
  std::vector<double> v_;
};

struct ConfusionMatrix {
  enum class Method { Analytic, MonteCarlo };
  SquareMatrix p;  // p(i, j): sent point i decided as point j
  Method method = Method::Analytic;
  bool fell_back = false;  // analytic requested but degenerate
};

struct ConfusionOptions {
  ConfusionMatrix::Method method = ConfusionMatrix::Method::Analytic;
  std::uint64_t seed = 0;
  std::uint64_t trials_per_point = 100000;
};

/// Analytic: off-diagonal Q(d_ij / (2 sigma)), sigma^2 = N0/2, diagonal the
/// rest of the row. Falls back to Monte-Carlo ML slicing when some analytic
/// row sum reaches 1.
ConfusionMatrix build_confusion(const Constellation& c, double snr_db, const ConfusionOptions& options = {});

/// d(t, u) = (1 - cos(e_t, e_u)) / 2.
SquareMatrix semantic_distance(const Codebook& codebook);

/// point_of_token[t] is the constellation point carrying token t.
using Assignment = std::vector<std::uint32_t>;

Assignment identity_assignment(std::size_t q);

/// sum_t prior[t] sum_{u != t} conf(pi(t), pi(u)) dist(t, u).
double expected_distortion(std::span<const std::uint32_t> assign, const SquareMatrix& conf, const SquareMatrix& dist,
                           std::span<const double> prior);

struct MappingResult {
  Assignment assignment;
  double distortion = 0.0;
};

struct AnnealOptions {
  std::uint64_t seed = 0;
  unsigned restarts = 8;
  std::size_t steps = 20000;  // per restart
  double t_start = 0.0;       // 0: derived from the instance
  double cooling = 0.9995;
  unsigned workers = 0;       // 0: hardware concurrency
};

/// Best-improvement pairwise-swap descent from the identity.
MappingResult optimize_greedy(const SquareMatrix& conf, const SquareMatrix& dist, std::span<const double> prior);

/// Simulated annealing over pairwise swaps, geometric cooling, best of
/// restarts (ties to the lowest restart). Restart r draws from the Optimizer
/// substream (seed, r). Never worse than the identity.
MappingResult optimize_anneal(const SquareMatrix& conf, const SquareMatrix& dist, std::span<const double> prior,
                              const AnnealOptions& options = {});

/// Exhaustive search, Q <= 8; ties to the lexicographically smallest.
MappingResult brute_force(const SquareMatrix& conf, const SquareMatrix& dist, std::span<const double> prior);

/// Label override for the modulator: label_of_point[k] = token mapped to k.
std::vector<std::uint32_t> labels_for(std::span<const std::uint32_t> assign);

/// CSV with header token_id,point_index,point_I,point_Q.
std::string assignment_csv(std::span<const std::uint32_t> assign, const Constellation& c);

}  // namespace tokcom
