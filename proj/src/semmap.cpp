#include "tokcom/semmap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tokcom/rng.hpp"

namespace tokcom {

namespace {

void check_dims(std::size_t q, const SquareMatrix& conf, const SquareMatrix& dist, std::span<const double> prior) {
  if (conf.size() != q || dist.size() != q || prior.size() != q)
    throw std::invalid_argument("semmap: dimension mismatch (requires Q = M)");
}

ConfusionMatrix monte_carlo(const Constellation& c, double snr_db, const ConfusionOptions& o) {
  const std::size_t m = c.order();
  ConfusionMatrix out{SquareMatrix(m), ConfusionMatrix::Method::MonteCarlo, false};
  const double sigma = std::sqrt(std::pow(10.0, -snr_db / 10.0) / 2.0);
  for (std::size_t i = 0; i < m; ++i) {
    auto rng = Rng::substream(o.seed, Purpose::Test, i);
    const Symbol s = c.points()[i];
    for (std::uint64_t t = 0; t < o.trials_per_point; ++t) {
      const double nr = rng.normal();
      const double ni = rng.normal();
      out.p(i, c.slice({s.real() + sigma * nr, s.imag() + sigma * ni})) += 1.0;
    }
    for (std::size_t j = 0; j < m; ++j) out.p(i, j) /= static_cast<double>(o.trials_per_point);
  }
  return out;
}

}  // namespace

ConfusionMatrix build_confusion(const Constellation& c, double snr_db, const ConfusionOptions& options) {
  if (!std::isfinite(snr_db)) throw std::invalid_argument("build_confusion: SNR must be finite");
  if (options.method == ConfusionMatrix::Method::MonteCarlo) return monte_carlo(c, snr_db, options);
  const std::size_t m = c.order();
  const double sigma = std::sqrt(std::pow(10.0, -snr_db / 10.0) / 2.0);
  ConfusionMatrix out{SquareMatrix(m), ConfusionMatrix::Method::Analytic, false};
  for (std::size_t i = 0; i < m; ++i) {
    double off = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      out.p(i, j) = q_function(std::abs(c.points()[i] - c.points()[j]) / (2.0 * sigma));
      off += out.p(i, j);
    }
    if (off >= 1.0) {
      auto mc = monte_carlo(c, snr_db, options);
      mc.fell_back = true;
      return mc;
    }
    out.p(i, i) = 1.0 - off;
  }
  return out;
}

SquareMatrix semantic_distance(const Codebook& codebook) {
  if (!codebook.has_embeddings()) throw std::invalid_argument("semantic_distance: codebook has no embeddings");
  const std::size_t q = codebook.size();
  std::vector<double> norm(q);
  for (std::size_t t = 0; t < q; ++t) {
    const auto e = codebook.embedding(static_cast<TokenId>(t));
    norm[t] = std::sqrt(std::inner_product(e.begin(), e.end(), e.begin(), 0.0));
    if (!(norm[t] > 0.0)) throw std::invalid_argument("semantic_distance: zero embedding");
  }
  SquareMatrix d(q);
  for (std::size_t t = 0; t < q; ++t)
    for (std::size_t u = t + 1; u < q; ++u) {
      const auto a = codebook.embedding(static_cast<TokenId>(t));
      const auto b = codebook.embedding(static_cast<TokenId>(u));
      const double cosine = std::clamp(std::inner_product(a.begin(), a.end(), b.begin(), 0.0) / (norm[t] * norm[u]), -1.0, 1.0);
      d(t, u) = d(u, t) = (1.0 - cosine) / 2.0;
    }
  return d;
}

Assignment identity_assignment(std::size_t q) {
  Assignment a(q);
  std::iota(a.begin(), a.end(), 0u);
  return a;
}

double expected_distortion(std::span<const std::uint32_t> assign, const SquareMatrix& conf, const SquareMatrix& dist,
                           std::span<const double> prior) {
  const std::size_t q = assign.size();
  check_dims(q, conf, dist, prior);
  double total = 0.0;
  for (std::size_t t = 0; t < q; ++t) {
    double inner = 0.0;
    for (std::size_t u = 0; u < q; ++u)
      if (u != t) inner += conf(assign[t], assign[u]) * dist(t, u);
    total += prior[t] * inner;
  }
  return total;
}

namespace {

// Change in D from swapping the points of tokens a and b.
double swap_delta(std::span<const std::uint32_t> pi, std::size_t a, std::size_t b, const SquareMatrix& conf,
                  const SquareMatrix& dist, std::span<const double> prior) {
  const std::size_t q = pi.size();
  const std::uint32_t pa = pi[a], pb = pi[b];
  double delta = 0.0;
  for (std::size_t u = 0; u < q; ++u) {
    if (u == a || u == b) continue;
    const std::uint32_t pu = pi[u];
    delta += prior[a] * (conf(pb, pu) - conf(pa, pu)) * dist(a, u);
    delta += prior[b] * (conf(pa, pu) - conf(pb, pu)) * dist(b, u);
    delta += prior[u] * ((conf(pu, pb) - conf(pu, pa)) * dist(u, a) + (conf(pu, pa) - conf(pu, pb)) * dist(u, b));
  }
  delta += prior[a] * (conf(pb, pa) - conf(pa, pb)) * dist(a, b);
  delta += prior[b] * (conf(pa, pb) - conf(pb, pa)) * dist(b, a);
  return delta;
}

MappingResult anneal_once(const SquareMatrix& conf, const SquareMatrix& dist, std::span<const double> prior,
                          const AnnealOptions& o, unsigned restart) {
  const std::size_t q = prior.size();
  auto rng = Rng::substream(o.seed, Purpose::Optimizer, restart);
  Assignment cur = identity_assignment(q);
  for (std::size_t i = q - 1; i > 0; --i) std::swap(cur[i], cur[rng.below(i + 1)]);
  double d = expected_distortion(cur, conf, dist, prior);
  MappingResult best{cur, d};

  double temp = o.t_start;
  if (!(temp > 0.0)) {
    // Mean absolute swap delta from a short probe.
    double sum = 0.0;
    const int probes = 64;
    for (int k = 0; k < probes; ++k) {
      const std::size_t a = rng.below(q);
      const std::size_t b = (a + 1 + rng.below(q - 1)) % q;
      sum += std::abs(swap_delta(cur, a, b, conf, dist, prior));
    }
    temp = std::max(sum / probes, 1e-12);
  }
  for (std::size_t step = 0; step < o.steps; ++step) {
    const std::size_t a = rng.below(q);
    const std::size_t b = (a + 1 + rng.below(q - 1)) % q;
    const double delta = swap_delta(cur, a, b, conf, dist, prior);
    const double u = rng.uniform();
    if (delta <= 0.0 || u < std::exp(-delta / temp)) {
      std::swap(cur[a], cur[b]);
      d += delta;
      if (d < best.distortion - 1e-15) best = {cur, d};
    }
    temp *= o.cooling;
  }
  best.distortion = expected_distortion(best.assignment, conf, dist, prior);
  return best;
}

}  // namespace

MappingResult optimize_greedy(const SquareMatrix& conf, const SquareMatrix& dist, std::span<const double> prior) {
  const std::size_t q = prior.size();
  check_dims(q, conf, dist, prior);
  Assignment pi = identity_assignment(q);
  for (;;) {
    double best_delta = -1e-15;
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < q; ++a)
      for (std::size_t b = a + 1; b < q; ++b) {
        const double delta = swap_delta(pi, a, b, conf, dist, prior);
        if (delta < best_delta) {
          best_delta = delta;
          ba = a;
          bb = b;
        }
      }
    if (ba == bb) break;
    std::swap(pi[ba], pi[bb]);
  }
  const double d = expected_distortion(pi, conf, dist, prior);
  return {std::move(pi), d};
}

MappingResult optimize_anneal(const SquareMatrix& conf, const SquareMatrix& dist, std::span<const double> prior,
                              const AnnealOptions& o) {
  const std::size_t q = prior.size();
  check_dims(q, conf, dist, prior);
  if (o.restarts == 0) throw std::invalid_argument("anneal: restarts must be >= 1");
  if (!(o.cooling > 0.0 && o.cooling <= 1.0)) throw std::invalid_argument("anneal: cooling must lie in (0, 1]");
  const Assignment id = identity_assignment(q);
  MappingResult best{id, expected_distortion(id, conf, dist, prior)};
  if (q < 2) return best;

  std::vector<MappingResult> results(o.restarts);
  unsigned workers = o.workers ? o.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, o.restarts);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (unsigned r = w; r < o.restarts; r += workers) results[r] = anneal_once(conf, dist, prior, o, r);
    });
  for (auto& t : pool) t.join();

  for (const auto& r : results)
    if (r.distortion < best.distortion) best = r;
  return best;
}

MappingResult brute_force(const SquareMatrix& conf, const SquareMatrix& dist, std::span<const double> prior) {
  const std::size_t q = prior.size();
  check_dims(q, conf, dist, prior);
  if (q > 8) throw std::invalid_argument("brute_force: Q must be <= 8");
  Assignment pi = identity_assignment(q);
  MappingResult best{pi, expected_distortion(pi, conf, dist, prior)};
  while (std::next_permutation(pi.begin(), pi.end())) {
    const double d = expected_distortion(pi, conf, dist, prior);
    if (d < best.distortion) best = {pi, d};
  }
  return best;
}

std::vector<std::uint32_t> labels_for(std::span<const std::uint32_t> assign) {
  std::vector<std::uint32_t> labels(assign.size(), static_cast<std::uint32_t>(assign.size()));
  for (std::size_t t = 0; t < assign.size(); ++t) {
    if (assign[t] >= assign.size() || labels[assign[t]] != assign.size())
      throw std::invalid_argument("assignment is not a bijection");
    labels[assign[t]] = static_cast<std::uint32_t>(t);
  }
  return labels;
}

std::string assignment_csv(std::span<const std::uint32_t> assign, const Constellation& c) {
  if (assign.size() != c.order()) throw std::invalid_argument("assignment size differs from constellation order");
  labels_for(assign);
  std::ostringstream os;
  os.precision(17);
  os << "token_id,point_index,point_I,point_Q\n";
  for (std::size_t t = 0; t < assign.size(); ++t) {
    const Symbol s = c.points()[assign[t]];
    os << t << ',' << assign[t] << ',' << s.real() << ',' << s.imag() << '\n';
  }
  return os.str();
}

}  // namespace tokcom
