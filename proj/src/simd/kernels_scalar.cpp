#include <limits>

#include "tokcom/simd.hpp"

namespace tokcom::simd::detail {

namespace {

constexpr unsigned kMaxBits = 8;

void llr_maxlog_scalar(const double* rx_re, const double* rx_im, std::size_t n, const double* pt_re,
                       const double* pt_im, const std::uint32_t* labels, std::size_t m, unsigned bits,
                       double inv_noise, double clamp, double* out) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    double min0[kMaxBits], min1[kMaxBits];
    for (unsigned k = 0; k < bits; ++k) min0[k] = min1[k] = inf;
    for (std::size_t s = 0; s < m; ++s) {
      const double dx = rx_re[i] - pt_re[s];
      const double dy = rx_im[i] - pt_im[s];
      const double d = dx * dx + dy * dy;
      for (unsigned k = 0; k < bits; ++k) {
        const bool one = (labels[s] >> (bits - 1 - k)) & 1u;
        double& acc = one ? min1[k] : min0[k];
        acc = d < acc ? d : acc;
      }
    }
    for (unsigned k = 0; k < bits; ++k) {
      double llr = (min1[k] - min0[k]) * inv_noise;
      llr = llr > clamp ? clamp : llr;
      llr = llr < -clamp ? -clamp : llr;
      out[i * bits + k] = llr;
    }
  }
}

void acs_step_scalar(const double* pm_in, double* pm_out, std::uint8_t* decisions, const AcsSigns& signs,
                     double llr_a, double llr_b, std::size_t half) {
  for (std::size_t j = 0; j < half; ++j) {
    const double even = pm_in[2 * j];
    const double odd = pm_in[2 * j + 1];
    for (int b = 0; b < 2; ++b) {
      const double bm0 = signs.sign_a[b][0][j] * llr_a + signs.sign_b[b][0][j] * llr_b;
      const double bm1 = signs.sign_a[b][1][j] * llr_a + signs.sign_b[b][1][j] * llr_b;
      const double m0 = even + bm0;
      const double m1 = odd + bm1;
      const bool take_odd = m1 > m0;
      pm_out[j + b * half] = take_odd ? m1 : m0;
      decisions[j + b * half] = take_odd ? 1 : 0;
    }
  }
}

void weighted_product_scalar(const double* a, const double* b, const double* w, std::size_t n, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = (a[i] * b[i]) * w[i];
}

}  // namespace

const Kernels kScalarKernels{llr_maxlog_scalar, acs_step_scalar, weighted_product_scalar};

}  // namespace tokcom::simd::detail
