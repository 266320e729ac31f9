#pragma once

// Reference computations used by the tests. They share no code with the
// library beyond its public value types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace tokcom::testing {

/// Posterior marginals of a sticky chain (stay s, otherwise uniform over the
/// other Q-1 tokens, uniform start) given observed[t] >= 0 or -1 for unknown.
/// Forward-backward using the rank-one structure of the transition matrix.
inline std::vector<std::vector<double>> sticky_marginals(std::uint32_t q, double stay,
                                                         const std::vector<std::int64_t>& observed) {
  const std::size_t n = observed.size();
  const double off = (1.0 - stay) / (q - 1);
  const double diag = stay - off;
  auto evidence = [&](std::size_t t, std::vector<double>& v) {
    if (observed[t] < 0) return;
    const double keep = v[static_cast<std::size_t>(observed[t])];
    std::fill(v.begin(), v.end(), 0.0);
    v[static_cast<std::size_t>(observed[t])] = keep;
  };
  auto normalize = [](std::vector<double>& v) {
    double z = 0.0;
    for (double x : v) z += x;
    for (double& x : v) x /= z;
  };
  auto propagate = [&](const std::vector<double>& in) {
    double z = 0.0;
    for (double x : in) z += x;
    std::vector<double> out(in.size());
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = diag * in[j] + off * z;
    return out;
  };

  std::vector<std::vector<double>> alpha(n), beta(n);
  alpha[0].assign(q, 1.0 / q);
  evidence(0, alpha[0]);
  normalize(alpha[0]);
  for (std::size_t t = 1; t < n; ++t) {
    alpha[t] = propagate(alpha[t - 1]);
    evidence(t, alpha[t]);
    normalize(alpha[t]);
  }
  beta[n - 1].assign(q, 1.0);
  for (std::size_t t = n - 1; t-- > 0;) {
    std::vector<double> eb = beta[t + 1];
    evidence(t + 1, eb);
    beta[t] = propagate(eb);  // A is symmetric
    normalize(beta[t]);
  }
  std::vector<std::vector<double>> post(n);
  for (std::size_t t = 0; t < n; ++t) {
    post[t].resize(q);
    for (std::uint32_t x = 0; x < q; ++x) post[t][x] = alpha[t][x] * beta[t][x];
    normalize(post[t]);
  }
  return post;
}

/// Index of the largest entry, ties to the lower index.
inline std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Upper tail of the standard normal.
inline double gaussian_tail(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

}  // namespace tokcom::testing
