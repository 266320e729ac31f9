#include "tokcom/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "tokcom/rng.hpp"
#include "tokcom/simd.hpp"

namespace tokcom {

using nlohmann::json;

// --- ProbModel defaults ---------------------------------------------------

void ProbModel::marginal(const SideInfo&, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 1.0 / q());
}

void ProbModel::causal_dist(std::span<const TokenId>, const SideInfo&, std::span<double>) const {
  throw std::logic_error("model '" + name() + "' is not causal");
}

PredictionResult ProbModel::predict_masked(const MaskedSequence& seq, const SideInfo& side,
                                           std::size_t top_k) const {
  PredictionResult result;
  std::vector<double> dist(q());
  for (std::size_t pos : seq.masked_positions()) {
    const Evidence ev = masked_dist(seq, pos, side, dist);
    result.positions.push_back(truncate_top_k(dist, pos, top_k, ev));
  }
  return result;
}

std::vector<double> PositionPrediction::expand(std::uint32_t q) const {
  std::vector<double> out(q, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) out.at(ids[i]) = probs[i];
  if (ids.size() < q && residual > 0.0) {
    const double share = residual / static_cast<double>(q - ids.size());
    std::vector<bool> listed(q, false);
    for (TokenId id : ids) listed[id] = true;
    for (std::uint32_t x = 0; x < q; ++x)
      if (!listed[x]) out[x] = share;
  }
  return out;
}

PositionPrediction truncate_top_k(std::span<const double> dist, std::size_t pos, std::size_t top_k, Evidence ev) {
  const std::size_t q = dist.size();
  const std::size_t k = (top_k == 0 || top_k > q) ? q : top_k;
  std::vector<TokenId> order(q);
  std::iota(order.begin(), order.end(), TokenId{0});
  auto by_prob = [&](TokenId a, TokenId b) { return dist[a] > dist[b] || (dist[a] == dist[b] && a < b); };
  if (k < q)
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), by_prob);
  else
    std::sort(order.begin(), order.end(), by_prob);

  PositionPrediction p;
  p.pos = pos;
  p.evidence = ev;
  p.ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  double listed = 0.0;
  for (TokenId id : p.ids) {
    p.probs.push_back(dist[id]);
    listed += dist[id];
  }
  p.residual = k < q ? std::max(0.0, 1.0 - listed) : 0.0;
  return p;
}

// --- Uniform / unigram ----------------------------------------------------

UniformModel::UniformModel(std::uint32_t q) : q_(q) {
  if (q < 2) throw std::invalid_argument("uniform model needs Q >= 2");
}

void UniformModel::causal_dist(std::span<const TokenId>, const SideInfo&, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 1.0 / q_);
}

Evidence UniformModel::masked_dist(const MaskedSequence&, std::size_t, const SideInfo&, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 1.0 / q_);
  return Evidence::Prior;
}

UnigramModel::UnigramModel(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) throw std::invalid_argument("unigram model needs Q >= 2");
}

void UnigramModel::marginal(const SideInfo&, std::span<double> out) const {
  std::copy(probs_.begin(), probs_.end(), out.begin());
}

void UnigramModel::causal_dist(std::span<const TokenId>, const SideInfo&, std::span<double> out) const {
  std::copy(probs_.begin(), probs_.end(), out.begin());
}

Evidence UnigramModel::masked_dist(const MaskedSequence&, std::size_t, const SideInfo&, std::span<double> out) const {
  std::copy(probs_.begin(), probs_.end(), out.begin());
  return Evidence::Prior;
}

std::shared_ptr<UnigramModel> train_unigram(std::span<const TokenSequence> corpus, std::uint32_t q, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("smoothing alpha must be > 0");
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  std::vector<std::uint64_t> counts(q, 0);
  std::uint64_t total = 0;
  for (const auto& s : corpus) {
    if (s.q() != q) throw std::invalid_argument("corpus codebook mismatch");
    for (TokenId id : s.ids()) ++counts[id];
    total += s.size();
  }
  std::vector<double> probs(q);
  const double denom = static_cast<double>(total) + alpha * q;
  for (std::uint32_t x = 0; x < q; ++x) probs[x] = (static_cast<double>(counts[x]) + alpha) / denom;
  return std::make_shared<UnigramModel>(std::move(probs));
}

// --- Markov counts --------------------------------------------------------

MarkovCounts count_markov(std::span<const TokenSequence> corpus, unsigned order, double alpha,
                          MarkovCounts::Direction direction) {
  if (!(alpha > 0.0)) throw std::invalid_argument("smoothing alpha must be > 0");
  if (order < 1) throw std::invalid_argument("Markov order must be >= 1");
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  MarkovCounts c;
  c.q = corpus.front().q();
  c.order = order;
  c.alpha = alpha;
  c.direction = direction;
  c.unigram.assign(c.q, 0);
  bool any_context = false;
  std::vector<TokenId> ids;
  for (const auto& s : corpus) {
    if (s.q() != c.q) throw std::invalid_argument("corpus codebook mismatch");
    ids.assign(s.ids().begin(), s.ids().end());
    if (direction == MarkovCounts::Direction::Backward) std::reverse(ids.begin(), ids.end());
    for (TokenId id : ids) ++c.unigram[id];
    for (std::size_t i = order; i < ids.size(); ++i) {
      std::vector<TokenId> ctx(ids.begin() + static_cast<std::ptrdiff_t>(i - order),
                               ids.begin() + static_cast<std::ptrdiff_t>(i));
      auto& row = c.contexts[ctx];
      if (row.empty()) row.assign(c.q, 0);
      ++row[ids[i]];
      any_context = true;
    }
  }
  if (!any_context) throw std::invalid_argument("corpus sequences must be longer than the model order");
  return c;
}

std::string MarkovCounts::to_json() const {
  json j;
  j["format"] = "tokcom-markov";
  j["version"] = 1;
  j["q"] = q;
  j["order"] = order;
  j["alpha"] = alpha;
  j["direction"] = direction == Direction::Forward ? "forward" : "backward";
  j["unigram"] = unigram;
  json ctxs = json::array();
  for (const auto& [ctx, counts] : contexts) {
    json sparse = json::array();
    for (std::uint32_t x = 0; x < q; ++x)
      if (counts[x] != 0) sparse.push_back({x, counts[x]});
    ctxs.push_back({{"context", ctx}, {"counts", sparse}});
  }
  j["contexts"] = std::move(ctxs);
  return j.dump();
}

MarkovCounts MarkovCounts::from_json(const std::string& text) {
  MarkovCounts c;
  try {
    const json j = json::parse(text);
    if (j.at("format") != "tokcom-markov" || j.at("version") != 1)
      throw std::invalid_argument("not a tokcom-markov v1 model file");
    c.q = j.at("q").get<std::uint32_t>();
    c.order = j.at("order").get<unsigned>();
    c.alpha = j.at("alpha").get<double>();
    const auto dir = j.at("direction").get<std::string>();
    if (dir != "forward" && dir != "backward") throw std::invalid_argument("bad direction '" + dir + "'");
    c.direction = dir == "forward" ? Direction::Forward : Direction::Backward;
    c.unigram = j.at("unigram").get<std::vector<std::uint64_t>>();
    if (c.q < 2 || c.unigram.size() != c.q) throw std::invalid_argument("unigram size does not match q");
    for (const auto& e : j.at("contexts")) {
      auto ctx = e.at("context").get<std::vector<TokenId>>();
      if (ctx.size() != c.order) throw std::invalid_argument("context length does not match order");
      std::vector<std::uint64_t> row(c.q, 0);
      for (const auto& pair : e.at("counts")) {
        const auto x = pair.at(0).get<std::uint32_t>();
        if (x >= c.q) throw std::invalid_argument("token id out of range in model file");
        row[x] = pair.at(1).get<std::uint64_t>();
      }
      c.contexts.emplace(std::move(ctx), std::move(row));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("model file parse error: ") + e.what());
  }
  return c;
}

// --- MarkovModel ----------------------------------------------------------

MarkovModel::MarkovModel(const MarkovCounts& counts)
    : q_(counts.q), order_(counts.order), direction_(counts.direction) {
  if (order_ * ceil_log2(q_) > 62) throw std::invalid_argument("Markov context does not fit a 64-bit key");
  Table t;
  const double aq = counts.alpha * q_;
  const double total = static_cast<double>(std::accumulate(counts.unigram.begin(), counts.unigram.end(), std::uint64_t{0}));
  t.marginal.resize(q_);
  for (std::uint32_t x = 0; x < q_; ++x)
    t.marginal[x] = (static_cast<double>(counts.unigram[x]) + counts.alpha) / (total + aq);
  for (const auto& [ctx, row_counts] : counts.contexts) {
    const double n = static_cast<double>(std::accumulate(row_counts.begin(), row_counts.end(), std::uint64_t{0}));
    std::vector<double> row(q_);
    for (std::uint32_t x = 0; x < q_; ++x) row[x] = (static_cast<double>(row_counts[x]) + counts.alpha) / (n + aq);
    t.rows.emplace(key(ctx), std::move(row));
  }
  tables_.push_back(std::move(t));
}

MarkovModel MarkovModel::exact(const MarkovSource& source, Direction direction) {
  if (source.order() > 1) throw std::invalid_argument("exact models support order-0 and order-1 sources");
  MarkovModel m;
  m.q_ = source.q();
  m.order_ = source.order();
  m.direction_ = direction;
  m.exact_ = true;
  m.class_conditional_ = source.class_conditional();
  const std::uint32_t q = m.q_;
  for (std::size_t cls = 0; cls < source.class_count(); ++cls) {
    const SideInfo side = source.class_conditional()
                              ? SideInfo::class_label(static_cast<std::uint32_t>(cls), source.label_bits())
                              : SideInfo::none();
    Table t;
    if (source.order() == 0) {
      const auto r = source.row(side, 0);
      t.marginal.assign(r.begin(), r.end());
      m.tables_.push_back(std::move(t));
      continue;
    }
    if (direction == Direction::Forward) {
      try {
        t.marginal = stationary_distribution(source, side);
      } catch (const std::domain_error&) {
        t.marginal = source.tables(side).initial;
      }
      for (std::uint32_t s = 0; s < q; ++s) {
        const auto r = source.row(side, s);
        t.rows.emplace(s, std::vector<double>(r.begin(), r.end()));
      }
    } else {
      const auto pi = stationary_distribution(source, side);
      t.marginal = pi;
      for (std::uint32_t r = 0; r < q; ++r) {
        std::vector<double> row(q);
        double z = 0.0;
        for (std::uint32_t x = 0; x < q; ++x) {
          row[x] = pi[x] * source.row(side, x)[r];
          z += row[x];
        }
        if (z <= 0.0) continue;
        for (double& v : row) v /= z;
        t.rows.emplace(r, std::move(row));
      }
    }
    m.tables_.push_back(std::move(t));
  }
  return m;
}

std::string MarkovModel::name() const {
  return std::string(exact_ ? "exact-" : "markov-") + (direction_ == Direction::Forward ? "fwd" : "bwd") + "-k" +
         std::to_string(order_);
}

const MarkovModel::Table& MarkovModel::table(const SideInfo& side) const {
  if (!class_conditional_) return tables_.front();
  if (!side.has_label()) throw std::invalid_argument("class-conditional model requires a class label");
  if (side.label >= tables_.size()) throw std::invalid_argument("unknown class label " + std::to_string(side.label));
  return tables_[side.label];
}

std::uint64_t MarkovModel::key(std::span<const TokenId> context) const {
  std::uint64_t k = 0;
  for (TokenId id : context) k = k * q_ + id;
  return k;
}

const std::vector<double>* MarkovModel::row(std::span<const TokenId> context, const SideInfo& side) const {
  const auto& t = table(side);
  auto it = t.rows.find(key(context));
  return it == t.rows.end() ? nullptr : &it->second;
}

void MarkovModel::marginal(const SideInfo& side, std::span<double> out) const {
  const auto& m = table(side).marginal;
  std::copy(m.begin(), m.end(), out.begin());
}

void MarkovModel::causal_dist(std::span<const TokenId> history, const SideInfo& side, std::span<double> out) const {
  if (direction_ != Direction::Forward) throw std::logic_error("backward Markov model is not causal");
  const std::vector<double>* r = nullptr;
  if (order_ > 0 && history.size() >= order_) r = row(history.last(order_), side);
  const auto& src = r ? *r : table(side).marginal;
  std::copy(src.begin(), src.end(), out.begin());
}

Evidence MarkovModel::masked_dist(const MaskedSequence& seq, std::size_t pos, const SideInfo& side,
                                  std::span<double> out) const {
  const std::vector<double>* r = nullptr;
  if (order_ > 0) {
    std::vector<TokenId> ctx(order_);
    bool available = true;
    if (direction_ == Direction::Forward) {
      available = pos >= order_;
      for (unsigned i = 0; available && i < order_; ++i) {
        const std::size_t p = pos - order_ + i;
        if (seq.is_masked(p)) available = false; else ctx[i] = seq.id(p);
      }
    } else {
      available = pos + order_ < seq.size();
      for (unsigned i = 0; available && i < order_; ++i) {
        const std::size_t p = pos + order_ - i;
        if (seq.is_masked(p)) available = false; else ctx[i] = seq.id(p);
      }
    }
    if (available) r = row(ctx, side);
  }
  const auto& src = r ? *r : table(side).marginal;
  std::copy(src.begin(), src.end(), out.begin());
  if (!r) return Evidence::Prior;
  return direction_ == Direction::Forward ? Evidence::Left : Evidence::Right;
}

std::shared_ptr<MarkovModel> train_markov(std::span<const TokenSequence> corpus, unsigned order, double alpha) {
  return std::make_shared<MarkovModel>(count_markov(corpus, order, alpha, MarkovCounts::Direction::Forward));
}

std::shared_ptr<MarkovModel> train_markov_reversed(std::span<const TokenSequence> corpus, unsigned order,
                                                   double alpha) {
  return std::make_shared<MarkovModel>(count_markov(corpus, order, alpha, MarkovCounts::Direction::Backward));
}

// --- Bidirectional --------------------------------------------------------

BidirectionalModel::BidirectionalModel(ModelPtr forward, ModelPtr backward, CombineRule rule)
    : forward_(std::move(forward)), backward_(std::move(backward)), rule_(rule) {
  if (!forward_ || !backward_) throw std::invalid_argument("bidirectional model needs two models");
  if (forward_->q() != backward_->q()) throw std::invalid_argument("forward and backward models differ in Q");
}

ModelCaps BidirectionalModel::caps() const {
  const auto f = forward_->caps();
  const auto b = backward_->caps();
  return {f.causal, true, f.uses_side_info || b.uses_side_info};
}

std::string BidirectionalModel::name() const {
  return "bidir(" + forward_->name() + "," + backward_->name() + (rule_ == CombineRule::Bayes ? ",bayes)" : ",product)");
}

void BidirectionalModel::marginal(const SideInfo& side, std::span<double> out) const { forward_->marginal(side, out); }

void BidirectionalModel::causal_dist(std::span<const TokenId> history, const SideInfo& side,
                                     std::span<double> out) const {
  forward_->causal_dist(history, side, out);
}

Evidence BidirectionalModel::masked_dist(const MaskedSequence& seq, std::size_t pos, const SideInfo& side,
                                         std::span<double> out) const {
  const std::uint32_t nq = q();
  std::vector<double> f(nq), b(nq);
  const bool has_f = forward_->masked_dist(seq, pos, side, f) != Evidence::Prior;
  const bool has_b = backward_->masked_dist(seq, pos, side, b) != Evidence::Prior;
  if (has_f && has_b) {
    std::vector<double> w(nq, 1.0);
    if (rule_ == CombineRule::Bayes) {
      backward_->marginal(side, w);
      for (double& v : w) v = v > 0.0 ? 1.0 / v : 0.0;
    }
    simd::kernels().weighted_product(f.data(), b.data(), w.data(), nq, out.data());
    const double z = std::accumulate(out.begin(), out.end(), 0.0);
    if (z > 0.0 && std::isfinite(z)) {
      for (double& v : out) v /= z;
      return Evidence::Both;
    }
    for (std::uint32_t x = 0; x < nq; ++x) out[x] = 0.5 * (f[x] + b[x]);
    return Evidence::Averaged;
  }
  if (has_b) {
    std::copy(b.begin(), b.end(), out.begin());
    return Evidence::Right;
  }
  std::copy(f.begin(), f.end(), out.begin());
  return has_f ? Evidence::Left : Evidence::Prior;
}

std::shared_ptr<BidirectionalModel> bidirectional_combine(ModelPtr causal, ModelPtr reversed, CombineRule rule) {
  return std::make_shared<BidirectionalModel>(std::move(causal), std::move(reversed), rule);
}

std::shared_ptr<BidirectionalModel> exact_bidirectional(const MarkovSource& source) {
  auto fwd = std::make_shared<MarkovModel>(MarkovModel::exact(source, MarkovModel::Direction::Forward));
  auto bwd = std::make_shared<MarkovModel>(MarkovModel::exact(source, MarkovModel::Direction::Backward));
  return bidirectional_combine(std::move(fwd), std::move(bwd), CombineRule::Bayes);
}

// --- predict / fill / cross_entropy ---------------------------------------

PredictionResult predict(const ProbModel& model, const MaskedSequence& masked, const SideInfo& side,
                         std::size_t top_k) {
  if (model.q() != masked.q())
    throw std::invalid_argument("model/codebook mismatch: model Q=" + std::to_string(model.q()) +
                                ", sequence Q=" + std::to_string(masked.q()));
  if (masked.masked_count() == 0) throw std::invalid_argument("predict: no masked positions");
  return model.predict_masked(masked, side, top_k);
}

FillSchedule::FillSchedule(std::vector<double> cumulative) : cumulative_(std::move(cumulative)) {
  if (cumulative_.empty()) throw std::invalid_argument("fill schedule needs at least one iteration");
  double prev = 0.0;
  for (double c : cumulative_) {
    if (!(c > 0.0 && c <= 1.0)) throw std::invalid_argument("reveal fractions must lie in (0, 1]");
    if (c < prev) throw std::invalid_argument("cumulative reveal fractions must be non-decreasing");
    prev = c;
  }
  if (cumulative_.back() != 1.0) throw std::invalid_argument("final cumulative reveal fraction must be 1");
}

FillSchedule FillSchedule::cosine(unsigned iterations) {
  if (iterations == 0) throw std::invalid_argument("fill schedule needs at least one iteration");
  std::vector<double> c(iterations);
  for (unsigned t = 1; t <= iterations; ++t)
    c[t - 1] = 1.0 - std::cos(std::numbers::pi / 2.0 * static_cast<double>(t) / iterations);
  c.back() = 1.0;
  return FillSchedule(std::move(c));
}

std::size_t FillSchedule::revealed_after(std::size_t t, std::size_t total) const {
  if (t + 1 >= cumulative_.size()) return total;
  const double target = std::ceil(cumulative_[t] * static_cast<double>(total) - 1e-9);
  return std::min(total, static_cast<std::size_t>(std::max(0.0, target)));
}

namespace {

struct Choice {
  std::size_t pos;
  TokenId id;
  double confidence;
};

Choice choose(const PositionPrediction& p, std::uint32_t q, const FillOptions& opt, std::size_t iteration) {
  if (opt.mode == FillOptions::Mode::Argmax && p.ids.size() == q) return {p.pos, p.ids[0], p.probs[0]};
  const auto dist = p.expand(q);
  if (opt.mode == FillOptions::Mode::Argmax) {
    TokenId best = 0;
    for (TokenId x = 1; x < q; ++x)
      if (dist[x] > dist[best]) best = x;
    return {p.pos, best, dist[best]};
  }
  Rng rng = Rng::substream(opt.seed, Purpose::Sampling, iteration, p.pos);
  std::vector<double> cdf(q);
  std::partial_sum(dist.begin(), dist.end(), cdf.begin());
  const auto id = static_cast<TokenId>(rng.pick_cumulative(cdf));
  return {p.pos, id, dist[id]};
}

}  // namespace

FillResult fill(const ProbModel& model, const MaskedSequence& masked, const SideInfo& side, const FillOptions& opt) {
  MaskedSequence cur = masked;
  const std::uint32_t q = model.q();
  std::vector<double> confidence(cur.size(), 1.0);
  std::vector<std::size_t> commits;
  const std::size_t total = cur.masked_count();
  std::size_t committed = 0;
  for (std::size_t t = 0; t < opt.schedule.iterations() && committed < total; ++t) {
    const std::size_t need = opt.schedule.revealed_after(t, total) - committed;
    if (need == 0) {
      commits.push_back(0);
      continue;
    }
    const auto preds = predict(model, cur, side, opt.top_k);
    std::vector<Choice> choices;
    choices.reserve(preds.positions.size());
    for (const auto& p : preds.positions) choices.push_back(choose(p, q, opt, t));
    std::stable_sort(choices.begin(), choices.end(), [](const Choice& a, const Choice& b) {
      return a.confidence > b.confidence || (a.confidence == b.confidence && a.pos < b.pos);
    });
    const std::size_t n = std::min(need, choices.size());
    for (std::size_t i = 0; i < n; ++i) {
      cur.set(choices[i].pos, choices[i].id);
      confidence[choices[i].pos] = choices[i].confidence;
    }
    committed += n;
    commits.push_back(n);
  }
  return {cur.to_sequence(), std::move(confidence), std::move(commits)};
}

double cross_entropy(const ProbModel& model, const TokenSequence& seq, const SideInfo& side) {
  if (!model.caps().causal) throw std::invalid_argument("cross_entropy requires a causal model");
  if (model.q() != seq.q()) throw std::invalid_argument("model/codebook mismatch");
  std::vector<double> dist(model.q());
  double bits = 0.0;
  const auto ids = seq.ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    model.causal_dist(ids.first(i), side, dist);
    bits -= std::log2(dist[ids[i]]);
  }
  return bits / static_cast<double>(ids.size());
}

}  // namespace tokcom
