#include "tokcom/tokens.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "bytes.hpp"
#include "tokcom/rng.hpp"

namespace tokcom {

namespace {

constexpr std::uint16_t kCorpusVersion = 1;

std::uint64_t checked_pow(std::uint64_t base, unsigned exp) {
  std::uint64_t r = 1;
  for (unsigned i = 0; i < exp; ++i) {
    if (r > (std::uint64_t{1} << 40) / base) throw std::invalid_argument("Markov table too large");
    r *= base;
  }
  return r;
}

void check_distribution(std::span<const double> p, const char* what) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": negative or non-finite probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument(std::string(what) + ": distribution does not sum to 1");
}

std::vector<double> cumulative(std::span<const double> p) {
  std::vector<double> c(p.size());
  std::partial_sum(p.begin(), p.end(), c.begin());
  return c;
}

}  // namespace

unsigned ceil_log2(std::uint64_t q) {
  unsigned b = 0;
  while ((std::uint64_t{1} << b) < q) ++b;
  return b;
}

// --- Codebook -------------------------------------------------------------

Codebook::Codebook(std::uint32_t size_q) : size_q_(size_q), bits_(ceil_log2(size_q)) {
  if (size_q < 2) throw std::invalid_argument("codebook size must be at least 2");
}

Codebook::Codebook(std::uint32_t size_q, std::vector<double> embeddings, std::size_t dim)
    : Codebook(size_q) {
  if (dim == 0 || embeddings.size() != static_cast<std::size_t>(size_q) * dim)
    throw std::invalid_argument("embedding matrix must be size_q x dim");
  for (std::uint32_t t = 0; t < size_q; ++t) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = embeddings[t * dim + j];
      if (!std::isfinite(v)) throw std::invalid_argument("embedding entries must be finite");
      norm2 += v * v;
    }
    if (norm2 == 0.0) throw std::invalid_argument("embedding rows must have nonzero norm");
  }
  dim_ = dim;
  embeddings_ = std::move(embeddings);
}

std::span<const double> Codebook::embedding(TokenId id) const {
  if (!has_embeddings()) throw std::logic_error("codebook has no embeddings");
  if (id >= size_q_) throw std::out_of_range("token id out of range");
  return std::span(embeddings_).subspan(static_cast<std::size_t>(id) * dim_, dim_);
}

// --- Sequences ------------------------------------------------------------

TokenSequence::TokenSequence(std::uint32_t q, std::vector<TokenId> ids) : q_(q), ids_(std::move(ids)) {
  if (q < 2) throw std::invalid_argument("codebook size must be at least 2");
  if (ids_.empty()) throw std::invalid_argument("token sequence must be non-empty");
  for (TokenId id : ids_)
    if (id >= q) throw std::out_of_range("token id " + std::to_string(id) + " >= Q=" + std::to_string(q));
}

MaskedSequence::MaskedSequence(std::uint32_t q, std::size_t length) : q_(q), slots_(length, kMasked) {
  if (length == 0) throw std::invalid_argument("masked sequence must be non-empty");
}

MaskedSequence::MaskedSequence(const TokenSequence& seq) : q_(seq.q()), slots_(seq.ids().begin(), seq.ids().end()) {
  if (slots_.empty()) throw std::invalid_argument("masked sequence must be non-empty");
}

TokenId MaskedSequence::id(std::size_t i) const {
  if (slots_.at(i) < 0) throw std::logic_error("slot " + std::to_string(i) + " is masked");
  return static_cast<TokenId>(slots_[i]);
}

void MaskedSequence::set(std::size_t i, TokenId id) {
  if (id >= q_) throw std::out_of_range("token id out of range");
  slots_.at(i) = id;
}

std::size_t MaskedSequence::masked_count() const {
  return static_cast<std::size_t>(std::count(slots_.begin(), slots_.end(), kMasked));
}

std::vector<std::size_t> MaskedSequence::masked_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < slots_.size(); ++i)
    if (slots_[i] < 0) out.push_back(i);
  return out;
}

TokenSequence MaskedSequence::to_sequence() const {
  std::vector<TokenId> ids(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) ids[i] = id(i);
  return TokenSequence(q_, std::move(ids));
}

SideInfo SideInfo::class_label(std::uint32_t label, unsigned label_bits) {
  if (label_bits > 31 || label >= (std::uint32_t{1} << label_bits))
    throw std::invalid_argument("class label does not fit in label_bits");
  return {Kind::ClassLabel, label, label_bits};
}

// --- MarkovSource ---------------------------------------------------------

MarkovSource::MarkovSource(std::uint32_t q, unsigned order, Tables tables) : q_(q), order_(order) {
  tables_.push_back(std::move(tables));
  validate();
  build_cdfs();
}

MarkovSource::MarkovSource(std::uint32_t q, unsigned order, std::vector<Tables> per_class, unsigned label_bits)
    : q_(q), order_(order), class_conditional_(true), label_bits_(label_bits), tables_(std::move(per_class)) {
  if (tables_.empty()) throw std::invalid_argument("class-conditional source needs at least one class");
  if (label_bits > 31 || tables_.size() > (std::size_t{1} << label_bits))
    throw std::invalid_argument("more classes than label_bits can address");
  validate();
  build_cdfs();
}

void MarkovSource::validate() const {
  if (q_ < 2) throw std::invalid_argument("source alphabet must have at least 2 tokens");
  const std::uint64_t contexts = checked_pow(q_, order_);
  for (const auto& t : tables_) {
    if (t.transition.size() != contexts * q_) throw std::invalid_argument("transition table has wrong size");
    if (t.initial.size() != contexts) throw std::invalid_argument("initial table has wrong size");
    for (std::uint64_t c = 0; c < contexts; ++c)
      check_distribution(std::span(t.transition).subspan(c * q_, q_), "transition row");
    check_distribution(t.initial, "initial distribution");
  }
}

void MarkovSource::build_cdfs() {
  // Cumulative sums restart at each row so a lookup stays inside its row.
  const std::uint64_t contexts = checked_pow(q_, order_);
  for (const auto& t : tables_) {
    std::vector<double> cdf(t.transition.size());
    for (std::uint64_t c = 0; c < contexts; ++c) {
      double acc = 0.0;
      for (std::uint32_t x = 0; x < q_; ++x) {
        acc += t.transition[c * q_ + x];
        cdf[c * q_ + x] = acc;
      }
    }
    transition_cdf_.push_back(std::move(cdf));
    initial_cdf_.push_back(cumulative(t.initial));
  }
}

MarkovSource MarkovSource::iid(std::vector<double> probs) {
  const auto q = static_cast<std::uint32_t>(probs.size());
  return MarkovSource(q, 0, Tables{std::move(probs), {1.0}});
}

MarkovSource MarkovSource::uniform(std::uint32_t q) {
  return iid(std::vector<double>(q, 1.0 / q));
}

MarkovSource MarkovSource::sticky(std::uint32_t q, double stay) {
  if (q < 2 || !(stay >= 0.0 && stay <= 1.0)) throw std::invalid_argument("sticky source: bad parameters");
  std::vector<double> tr(static_cast<std::size_t>(q) * q, (1.0 - stay) / (q - 1));
  for (std::uint32_t s = 0; s < q; ++s) tr[static_cast<std::size_t>(s) * q + s] = stay;
  return order1(std::move(tr), std::vector<double>(q, 1.0 / q));
}

MarkovSource MarkovSource::order1(std::vector<double> transition, std::vector<double> initial) {
  const auto q = static_cast<std::uint32_t>(initial.size());
  return MarkovSource(q, 1, Tables{std::move(transition), std::move(initial)});
}

const MarkovSource::Tables& MarkovSource::tables(const SideInfo& side) const {
  if (!class_conditional_) return tables_.front();
  if (!side.has_label()) throw std::invalid_argument("class-conditional source requires a class label");
  if (side.label >= tables_.size())
    throw std::invalid_argument("unknown class label " + std::to_string(side.label));
  return tables_[side.label];
}

std::span<const double> MarkovSource::row(const SideInfo& side, std::uint64_t context) const {
  return std::span(tables(side).transition).subspan(context * q_, q_);
}

TokenSequence generate(const MarkovSource& source, std::size_t n, const SideInfo& side, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate: n must be >= 1");
  const auto& tables = source.tables(side);
  const std::size_t cls = static_cast<std::size_t>(&tables - source.tables_.data());
  const auto& tr_cdf = source.transition_cdf_[cls];
  const std::uint32_t q = source.q();
  const unsigned k = source.order();
  const std::uint64_t contexts = checked_pow(q, k);

  Rng rng = Rng::substream(seed, Purpose::Source);
  std::vector<TokenId> ids;
  ids.reserve(n);
  std::uint64_t ctx = 0;
  if (k > 0) {
    ctx = rng.pick_cumulative(source.initial_cdf_[cls]);
    // Unpack the prefix, oldest token first.
    for (unsigned i = 0; i < k && ids.size() < n; ++i) {
      const std::uint64_t place = checked_pow(q, k - 1 - i);
      ids.push_back(static_cast<TokenId>((ctx / place) % q));
    }
  }
  while (ids.size() < n) {
    auto row = std::span(tr_cdf).subspan(ctx * q, q);
    const auto x = static_cast<TokenId>(rng.pick_cumulative(row));
    ids.push_back(x);
    if (k > 0) ctx = (ctx * q + x) % contexts;
  }
  return TokenSequence(q, std::move(ids));
}

double entropy_bits(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return h;
}

namespace {

// Number of closed communicating classes of the transition graph.
std::size_t closed_class_count(std::span<const double> tr, std::uint32_t q) {
  std::vector<std::vector<std::uint32_t>> adj(q);
  for (std::uint32_t s = 0; s < q; ++s)
    for (std::uint32_t t = 0; t < q; ++t)
      if (tr[static_cast<std::size_t>(s) * q + t] > 0.0) adj[s].push_back(t);

  // Tarjan SCC.
  std::vector<int> index(q, -1), low(q, 0), comp(q, -1);
  std::vector<bool> on_stack(q, false);
  std::vector<std::uint32_t> stack;
  int counter = 0, comps = 0;
  std::function<void(std::uint32_t)> visit = [&](std::uint32_t v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = true;
    for (std::uint32_t w : adj[v]) {
      if (index[w] < 0) {
        visit(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::uint32_t w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        comp[w] = comps;
      } while (w != v);
      ++comps;
    }
  };
  for (std::uint32_t v = 0; v < q; ++v)
    if (index[v] < 0) visit(v);

  std::vector<bool> leaves(static_cast<std::size_t>(comps), true);
  for (std::uint32_t v = 0; v < q; ++v)
    for (std::uint32_t w : adj[v])
      if (comp[v] != comp[w]) leaves[static_cast<std::size_t>(comp[v])] = false;
  return static_cast<std::size_t>(std::count(leaves.begin(), leaves.end(), true));
}

}  // namespace

std::vector<double> stationary_distribution(const MarkovSource& source, const SideInfo& side) {
  if (source.order() != 1) throw std::invalid_argument("stationary distribution needs an order-1 source");
  const std::uint32_t q = source.q();
  const auto& tr = source.tables(side).transition;
  if (closed_class_count(tr, q) != 1)
    throw std::domain_error("non-ergodic chain: no unique stationary distribution");

  // Lazy chain (I + A) / 2 has the same stationary law and is aperiodic.
  std::vector<double> pi(q, 1.0 / q), next(q);
  for (int iter = 0; iter < 1'000'000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::uint32_t s = 0; s < q; ++s) {
      const double w = 0.5 * pi[s];
      if (w == 0.0) continue;
      next[s] += w;
      const double* row = tr.data() + static_cast<std::size_t>(s) * q;
      for (std::uint32_t t = 0; t < q; ++t) next[t] += w * row[t];
    }
    const double total = std::accumulate(next.begin(), next.end(), 0.0);
    double delta = 0.0;
    for (std::uint32_t t = 0; t < q; ++t) {
      next[t] /= total;
      delta += std::abs(next[t] - pi[t]);
    }
    pi.swap(next);
    if (delta < 1e-12) return pi;
  }
  throw std::domain_error("stationary distribution did not converge");
}

double entropy_rate(const MarkovSource& source, const SideInfo& side) {
  const std::uint32_t q = source.q();
  if (source.order() == 0) return entropy_bits(source.row(side, 0));
  if (source.order() == 1) {
    const auto pi = stationary_distribution(source, side);
    double h = 0.0;
    for (std::uint32_t s = 0; s < q; ++s)
      if (pi[s] > 0.0) h += pi[s] * entropy_bits(source.row(side, s));
    return h;
  }
  constexpr std::size_t kSamples = 1'000'000;
  const auto seq = generate(source, kSamples + source.order(), side, 0x5EED);
  const std::uint64_t contexts = checked_pow(q, source.order());
  std::uint64_t ctx = 0;
  for (unsigned i = 0; i < source.order(); ++i) ctx = ctx * q + seq[i];
  double bits = 0.0;
  for (std::size_t i = source.order(); i < seq.size(); ++i) {
    bits -= std::log2(source.row(side, ctx)[seq[i]]);
    ctx = (ctx * q + seq[i]) % contexts;
  }
  return bits / static_cast<double>(kSamples);
}

// --- Corpus files ---------------------------------------------------------

std::vector<std::uint8_t> encode_corpus(std::uint32_t q, std::span<const TokenSequence> seqs) {
  detail::ByteWriter w;
  w.put_bytes(std::string_view("TOKC"));
  w.put_u16(kCorpusVersion);
  w.put_u32(q);
  w.put_u32(static_cast<std::uint32_t>(seqs.size()));
  for (const auto& s : seqs) {
    if (s.q() != q) throw std::invalid_argument("all corpus sequences must share one codebook");
    w.put_u32(static_cast<std::uint32_t>(s.size()));
    for (TokenId id : s.ids()) w.put_u32(id);
  }
  return w.take();
}

std::vector<TokenSequence> decode_corpus(std::span<const std::uint8_t> bytes, std::uint32_t* q_out) {
  detail::ByteReader r(bytes);
  r.expect_magic("TOKC");
  const auto version = r.u16("version");
  if (version != kCorpusVersion) throw FormatError("unsupported corpus version " + std::to_string(version));
  const auto q = r.u32("Q");
  if (q < 2) throw FormatError("corpus Q must be >= 2");
  const auto count = r.u32("sequence count");
  std::vector<TokenSequence> seqs;
  seqs.reserve(std::min<std::size_t>(count, r.remaining() / 4));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u32("sequence length");
    if (len == 0) throw FormatError("zero-length sequence in corpus");
    if (static_cast<std::uint64_t>(len) * 4 > r.remaining()) throw FormatError("truncated file in sequence body");
    std::vector<TokenId> ids(len);
    for (auto& id : ids) {
      id = r.u32("token id");
      if (id >= q) throw FormatError("token id " + std::to_string(id) + " out of range for Q=" + std::to_string(q));
    }
    seqs.emplace_back(q, std::move(ids));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after corpus");
  if (q_out) *q_out = q;
  return seqs;
}

void save_corpus(const std::filesystem::path& path, std::uint32_t q, std::span<const TokenSequence> seqs) {
  detail::write_file_atomic(path, encode_corpus(q, seqs));
}

std::vector<TokenSequence> load_corpus(const std::filesystem::path& path, std::uint32_t* q_out) {
  return decode_corpus(detail::read_file(path), q_out);
}

}  // namespace tokcom
