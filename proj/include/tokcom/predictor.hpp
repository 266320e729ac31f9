#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tokcom/tokens.hpp"

namespace tokcom {

struct ModelCaps {
  bool causal = false;
  bool bidirectional = false;
  bool uses_side_info = false;
};

/// What a masked-slot distribution was conditioned on.
enum class Evidence : std::uint8_t {
  Prior,     // no usable context; the model's marginal
  Left,      // preceding context only
  Right,     // following context only
  Both,      // both sides combined
  Averaged,  // both sides present but their product vanished; averaged instead
};

struct PositionPrediction {
  std::size_t pos = 0;
  std::vector<TokenId> ids;  // descending probability, ties by lower id
  std::vector<double> probs;
  double residual = 0.0;     // mass not covered by `ids`
  Evidence evidence = Evidence::Prior;

  /// Full distribution; residual mass is spread uniformly over unlisted ids.
  std::vector<double> expand(std::uint32_t q) const;
};

struct PredictionResult {
  std::vector<PositionPrediction> positions;  // one per masked slot, ascending pos
};

/// Probability model over codebook tokens. Implementations are immutable after
/// construction and safe to share between threads.
class ProbModel {
 public:
  virtual ~ProbModel() = default;

  virtual std::uint32_t q() const = 0;
  virtual ModelCaps caps() const = 0;
  virtual std::string name() const = 0;

  /// Context-free distribution. Uniform unless overridden.
  virtual void marginal(const SideInfo& side, std::span<double> out) const;

  /// P(x_i | x_0 .. x_{i-1}) with `history` = x_0 .. x_{i-1}. Throws unless causal.
  virtual void causal_dist(std::span<const TokenId> history, const SideInfo& side, std::span<double> out) const;

  /// Distribution for slot `pos` given the Known slots of `seq`.
  virtual Evidence masked_dist(const MaskedSequence& seq, std::size_t pos, const SideInfo& side,
                               std::span<double> out) const = 0;

  /// Predictions for every masked slot. top_k = 0 lists the full distribution.
  virtual PredictionResult predict_masked(const MaskedSequence& seq, const SideInfo& side,
                                          std::size_t top_k) const;
};

using ModelPtr = std::shared_ptr<const ProbModel>;

/// Sorted top-k view of a full distribution.
PositionPrediction truncate_top_k(std::span<const double> dist, std::size_t pos, std::size_t top_k, Evidence ev);

class UniformModel final : public ProbModel {
 public:
  explicit UniformModel(std::uint32_t q);
  std::uint32_t q() const override { return q_; }
  ModelCaps caps() const override { return {true, true, false}; }
  std::string name() const override { return "uniform"; }
  void causal_dist(std::span<const TokenId>, const SideInfo&, std::span<double> out) const override;
  Evidence masked_dist(const MaskedSequence&, std::size_t, const SideInfo&, std::span<double> out) const override;

 private:
  std::uint32_t q_;
};

/// Position-independent distribution; ignores context.
class UnigramModel final : public ProbModel {
 public:
  explicit UnigramModel(std::vector<double> probs);
  std::uint32_t q() const override { return static_cast<std::uint32_t>(probs_.size()); }
  ModelCaps caps() const override { return {true, true, false}; }
  std::string name() const override { return "unigram"; }
  void marginal(const SideInfo&, std::span<double> out) const override;
  void causal_dist(std::span<const TokenId>, const SideInfo&, std::span<double> out) const override;
  Evidence masked_dist(const MaskedSequence&, std::size_t, const SideInfo&, std::span<double> out) const override;
  std::span<const double> probs() const { return probs_; }

 private:
  std::vector<double> probs_;
};

/// Counts collected from a corpus; the canonical, serializable form of a
/// trained Markov model.
struct MarkovCounts {
  enum class Direction { Forward, Backward };

  std::uint32_t q = 0;
  unsigned order = 1;
  double alpha = 1.0;
  Direction direction = Direction::Forward;
  std::vector<std::uint64_t> unigram;  // size q
  /// Context tokens (oldest first in model direction) -> next-token counts.
  std::map<std::vector<TokenId>, std::vector<std::uint64_t>> contexts;

  std::string to_json() const;
  static MarkovCounts from_json(const std::string& text);
};

MarkovCounts count_markov(std::span<const TokenSequence> corpus, unsigned order, double alpha,
                          MarkovCounts::Direction direction);

/// Order-k directional Markov model with backoff to a marginal for unseen or
/// incomplete contexts. Forward models condition on the k preceding tokens,
/// backward models on the k following tokens.
class MarkovModel final : public ProbModel {
 public:
  using Direction = MarkovCounts::Direction;

  /// Smoothed model: P(x|c) = (n(c,x)+a)/(n(c)+aQ); marginal (n(x)+a)/(n+aQ).
  explicit MarkovModel(const MarkovCounts& counts);

  /// Exact model of an order-0 or order-1 source. The backward direction is
  /// the time-reversed chain pi(x)A[x,r]/pi(r). Class-conditional sources keep
  /// one table per label, selected by side info.
  static MarkovModel exact(const MarkovSource& source, Direction direction);

  std::uint32_t q() const override { return q_; }
  ModelCaps caps() const override { return {direction_ == Direction::Forward, false, class_conditional_}; }
  std::string name() const override;
  unsigned order() const { return order_; }
  Direction direction() const { return direction_; }

  void marginal(const SideInfo& side, std::span<double> out) const override;
  void causal_dist(std::span<const TokenId> history, const SideInfo& side, std::span<double> out) const override;
  Evidence masked_dist(const MaskedSequence& seq, std::size_t pos, const SideInfo& side,
                       std::span<double> out) const override;

  /// Conditional row for a context given oldest-first in model direction;
  /// nullptr if the context was never seen.
  const std::vector<double>* row(std::span<const TokenId> context, const SideInfo& side) const;

 private:
  struct Table {
    std::unordered_map<std::uint64_t, std::vector<double>> rows;
    std::vector<double> marginal;
  };

  MarkovModel() = default;
  const Table& table(const SideInfo& side) const;
  std::uint64_t key(std::span<const TokenId> context) const;

  std::uint32_t q_ = 0;
  unsigned order_ = 0;
  Direction direction_ = Direction::Forward;
  bool class_conditional_ = false;
  bool exact_ = false;
  std::vector<Table> tables_;
};

enum class CombineRule {
  Bayes,    // normalize(P_fwd * P_bwd / prior): exact one-gap posterior for Markov chains
  Product,  // normalize(P_fwd * P_bwd)
};

/// Masked-token model joining a causal model and a reversed model.
class BidirectionalModel final : public ProbModel {
 public:
  BidirectionalModel(ModelPtr forward, ModelPtr backward, CombineRule rule = CombineRule::Bayes);

  std::uint32_t q() const override { return forward_->q(); }
  ModelCaps caps() const override;
  std::string name() const override;
  void marginal(const SideInfo& side, std::span<double> out) const override;
  void causal_dist(std::span<const TokenId> history, const SideInfo& side, std::span<double> out) const override;
  Evidence masked_dist(const MaskedSequence& seq, std::size_t pos, const SideInfo& side,
                       std::span<double> out) const override;

  const ProbModel& forward() const { return *forward_; }
  const ProbModel& backward() const { return *backward_; }

 private:
  ModelPtr forward_;
  ModelPtr backward_;
  CombineRule rule_;
};

std::shared_ptr<UnigramModel> train_unigram(std::span<const TokenSequence> corpus, std::uint32_t q, double alpha);
std::shared_ptr<MarkovModel> train_markov(std::span<const TokenSequence> corpus, unsigned order, double alpha);
/// Backward model: the same estimator run on reversed sequences.
std::shared_ptr<MarkovModel> train_markov_reversed(std::span<const TokenSequence> corpus, unsigned order,
                                                   double alpha);
std::shared_ptr<BidirectionalModel> bidirectional_combine(ModelPtr causal, ModelPtr reversed,
                                                          CombineRule rule = CombineRule::Bayes);
/// Forward and backward exact models of `source`, combined by the Bayes rule.
std::shared_ptr<BidirectionalModel> exact_bidirectional(const MarkovSource& source);

/// Validated prediction: at least one masked slot, matching codebook.
PredictionResult predict(const ProbModel& model, const MaskedSequence& masked, const SideInfo& side,
                         std::size_t top_k = 0);

/// Cumulative reveal fractions, one per iteration, ending at 1.
class FillSchedule {
 public:
  explicit FillSchedule(std::vector<double> cumulative);
  /// cumulative_t = 1 - cos(pi/2 * t/I), t = 1..I.
  static FillSchedule cosine(unsigned iterations);
  static FillSchedule single() { return FillSchedule({1.0}); }

  std::size_t iterations() const { return cumulative_.size(); }
  std::span<const double> cumulative() const { return cumulative_; }
  /// Number of masks revealed by the end of iteration t (0-based) out of `total`.
  std::size_t revealed_after(std::size_t t, std::size_t total) const;

 private:
  std::vector<double> cumulative_;
};

struct FillOptions {
  enum class Mode { Argmax, Sample };

  FillSchedule schedule = FillSchedule::cosine(8);
  Mode mode = Mode::Argmax;
  std::uint64_t seed = 0;
  std::size_t top_k = 0;
};

struct FillResult {
  TokenSequence tokens;
  std::vector<double> confidence;           // committed probability; 1 for slots that were known
  std::vector<std::size_t> commits_per_iteration;
};

/// Iterative reveal: each iteration predicts all remaining masks and commits
/// the most confident ones (ties by lower position) up to the schedule's
/// cumulative fraction.
FillResult fill(const ProbModel& model, const MaskedSequence& masked, const SideInfo& side,
                const FillOptions& options = {});

/// Mean -log2 P(x_i | x_<i) in bits per token. Requires a causal model.
double cross_entropy(const ProbModel& model, const TokenSequence& seq, const SideInfo& side = {});

}  // namespace tokcom
