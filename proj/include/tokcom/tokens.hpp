#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tokcom {

using TokenId = std::uint32_t;

/// Malformed or truncated binary file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Smallest b with 2^b >= q.
unsigned ceil_log2(std::uint64_t q);

/// Token alphabet of size Q, optionally with one embedding row per token.
class Codebook {
 public:
  explicit Codebook(std::uint32_t size_q);
  Codebook(std::uint32_t size_q, std::vector<double> embeddings, std::size_t dim);

  std::uint32_t size() const { return size_q_; }
  unsigned bits_per_token() const { return bits_; }
  bool has_embeddings() const { return dim_ > 0; }
  std::size_t embedding_dim() const { return dim_; }
  std::span<const double> embedding(TokenId id) const;

 private:
  std::uint32_t size_q_;
  unsigned bits_;
  std::size_t dim_ = 0;
  std::vector<double> embeddings_;
};

class TokenSequence {
 public:
  TokenSequence(std::uint32_t q, std::vector<TokenId> ids);

  std::uint32_t q() const { return q_; }
  std::size_t size() const { return ids_.size(); }
  TokenId operator[](std::size_t i) const { return ids_[i]; }
  std::span<const TokenId> ids() const { return ids_; }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;

 private:
  std::uint32_t q_;
  std::vector<TokenId> ids_;
};

/// Token slots, each either Known(id) or Masked.
class MaskedSequence {
 public:
  static constexpr std::int64_t kMasked = -1;

  MaskedSequence(std::uint32_t q, std::size_t length);  // all masked
  explicit MaskedSequence(const TokenSequence& seq);    // all known

  std::uint32_t q() const { return q_; }
  std::size_t size() const { return slots_.size(); }
  bool is_masked(std::size_t i) const { return slots_[i] < 0; }
  bool is_known(std::size_t i) const { return slots_[i] >= 0; }
  TokenId id(std::size_t i) const;

  void set(std::size_t i, TokenId id);
  void mask(std::size_t i) { slots_.at(i) = kMasked; }

  std::size_t masked_count() const;
  std::vector<std::size_t> masked_positions() const;
  /// Slots as signed ints, -1 for masked (bridge wire form).
  std::span<const std::int64_t> raw() const { return slots_; }

  /// Throws if any slot is still masked.
  TokenSequence to_sequence() const;

  friend bool operator==(const MaskedSequence&, const MaskedSequence&) = default;

 private:
  std::uint32_t q_;
  std::vector<std::int64_t> slots_;
};

/// Out-of-band conditioning signal, e.g. a 7-bit class label.
struct SideInfo {
  enum class Kind { None, ClassLabel };

  Kind kind = Kind::None;
  std::uint32_t label = 0;
  unsigned label_bits = 0;

  static SideInfo none() { return {}; }
  static SideInfo class_label(std::uint32_t label, unsigned label_bits);
  bool has_label() const { return kind == Kind::ClassLabel; }
};

/// Order-k Markov token source, optionally with one table set per class label.
///
/// Transition rows are indexed by the base-q number of the length-k context,
/// oldest token most significant. `initial` is a distribution over the q^k
/// length-k prefixes (a single entry for k = 0).
class MarkovSource {
 public:
  struct Tables {
    std::vector<double> transition;  // q^k rows of q
    std::vector<double> initial;     // q^k
  };

  MarkovSource(std::uint32_t q, unsigned order, Tables tables);
  /// Class-conditional source: tables[label] for label in [0, tables.size()).
  MarkovSource(std::uint32_t q, unsigned order, std::vector<Tables> per_class, unsigned label_bits);

  static MarkovSource iid(std::vector<double> probs);
  static MarkovSource uniform(std::uint32_t q);
  /// Order-1 chain: repeat previous token with `stay`, otherwise a uniformly
  /// chosen different token. Starts from the uniform (stationary) law.
  static MarkovSource sticky(std::uint32_t q, double stay);
  /// Order-1 chain with explicit q x q row-stochastic matrix.
  static MarkovSource order1(std::vector<double> transition, std::vector<double> initial);

  std::uint32_t q() const { return q_; }
  unsigned order() const { return order_; }
  bool class_conditional() const { return class_conditional_; }
  unsigned label_bits() const { return label_bits_; }
  std::size_t class_count() const { return tables_.size(); }

  /// Tables selected by side info; throws on an unknown label.
  const Tables& tables(const SideInfo& side) const;
  std::span<const double> row(const SideInfo& side, std::uint64_t context) const;

 private:
  void validate() const;
  void build_cdfs();

  std::uint32_t q_;
  unsigned order_;
  bool class_conditional_ = false;
  unsigned label_bits_ = 0;
  std::vector<Tables> tables_;
  std::vector<std::vector<double>> transition_cdf_;
  std::vector<std::vector<double>> initial_cdf_;

  friend TokenSequence generate(const MarkovSource&, std::size_t, const SideInfo&, std::uint64_t);
};

/// Deterministic sample of length n. Uses the Source substream of `seed`.
TokenSequence generate(const MarkovSource& source, std::size_t n, const SideInfo& side,
                       std::uint64_t seed);

/// Stationary distribution of an order-1 source (power iteration on the lazy
/// chain, tolerance 1e-12). Throws if the chain has no unique stationary law.
std::vector<double> stationary_distribution(const MarkovSource& source,
                                            const SideInfo& side = {});

/// Entropy rate in bits per token. Analytic for order 0 and 1; higher orders
/// are estimated from a 10^6-token sample.
double entropy_rate(const MarkovSource& source, const SideInfo& side = {});

/// Shannon entropy in bits of a probability vector.
double entropy_bits(std::span<const double> p);

void save_corpus(const std::filesystem::path& path, std::uint32_t q,
                 std::span<const TokenSequence> seqs);
std::vector<TokenSequence> load_corpus(const std::filesystem::path& path, std::uint32_t* q_out = nullptr);

/// In-memory forms of the corpus file, used by save/load.
std::vector<std::uint8_t> encode_corpus(std::uint32_t q, std::span<const TokenSequence> seqs);
std::vector<TokenSequence> decode_corpus(std::span<const std::uint8_t> bytes,
                                         std::uint32_t* q_out = nullptr);

}  // namespace tokcom
