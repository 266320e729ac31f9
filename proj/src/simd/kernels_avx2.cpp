#include <immintrin.h>

#include <limits>

#include "tokcom/simd.hpp"

namespace tokcom::simd::detail {

namespace {

constexpr unsigned kMaxBits = 8;

void llr_maxlog_avx2(const double* rx_re, const double* rx_im, std::size_t n, const double* pt_re,
                     const double* pt_im, const std::uint32_t* labels, std::size_t m, unsigned bits,
                     double inv_noise, double clamp, double* out) {
  const __m256d inf = _mm256_set1_pd(std::numeric_limits<double>::infinity());
  const __m256d scale = _mm256_set1_pd(inv_noise);
  const __m256d hi = _mm256_set1_pd(clamp);
  const __m256d lo = _mm256_set1_pd(-clamp);

  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d yr = _mm256_loadu_pd(rx_re + i);
    const __m256d yi = _mm256_loadu_pd(rx_im + i);
    __m256d min0[kMaxBits], min1[kMaxBits];
    for (unsigned k = 0; k < bits; ++k) min0[k] = min1[k] = inf;
    for (std::size_t s = 0; s < m; ++s) {
      const __m256d dx = _mm256_sub_pd(yr, _mm256_set1_pd(pt_re[s]));
      const __m256d dy = _mm256_sub_pd(yi, _mm256_set1_pd(pt_im[s]));
      const __m256d d = _mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy));
      const std::uint32_t label = labels[s];
      for (unsigned k = 0; k < bits; ++k) {
        if ((label >> (bits - 1 - k)) & 1u)
          min1[k] = _mm256_min_pd(d, min1[k]);
        else
          min0[k] = _mm256_min_pd(d, min0[k]);
      }
    }
    alignas(32) double lanes[4];
    for (unsigned k = 0; k < bits; ++k) {
      __m256d llr = _mm256_mul_pd(_mm256_sub_pd(min1[k], min0[k]), scale);
      llr = _mm256_min_pd(hi, llr);
      llr = _mm256_max_pd(lo, llr);
      _mm256_store_pd(lanes, llr);
      for (int l = 0; l < 4; ++l) out[(i + static_cast<std::size_t>(l)) * bits + k] = lanes[l];
    }
  }
  if (i < n)
    kScalarKernels.llr_maxlog(rx_re + i, rx_im + i, n - i, pt_re, pt_im, labels, m, bits, inv_noise, clamp,
                              out + i * bits);
}

void acs_step_avx2(const double* pm_in, double* pm_out, std::uint8_t* decisions, const AcsSigns& signs,
                   double llr_a, double llr_b, std::size_t half) {
  const __m256d la = _mm256_set1_pd(llr_a);
  const __m256d lb = _mm256_set1_pd(llr_b);
  std::size_t j = 0;
  for (; j + 4 <= half; j += 4) {
    const __m256d v0 = _mm256_loadu_pd(pm_in + 2 * j);
    const __m256d v1 = _mm256_loadu_pd(pm_in + 2 * j + 4);
    const __m256d even = _mm256_permute4x64_pd(_mm256_unpacklo_pd(v0, v1), 0xD8);
    const __m256d odd = _mm256_permute4x64_pd(_mm256_unpackhi_pd(v0, v1), 0xD8);
    for (int b = 0; b < 2; ++b) {
      const __m256d bm0 = _mm256_add_pd(_mm256_mul_pd(_mm256_loadu_pd(signs.sign_a[b][0] + j), la),
                                        _mm256_mul_pd(_mm256_loadu_pd(signs.sign_b[b][0] + j), lb));
      const __m256d bm1 = _mm256_add_pd(_mm256_mul_pd(_mm256_loadu_pd(signs.sign_a[b][1] + j), la),
                                        _mm256_mul_pd(_mm256_loadu_pd(signs.sign_b[b][1] + j), lb));
      const __m256d m0 = _mm256_add_pd(even, bm0);
      const __m256d m1 = _mm256_add_pd(odd, bm1);
      const __m256d take_odd = _mm256_cmp_pd(m1, m0, _CMP_GT_OQ);
      _mm256_storeu_pd(pm_out + j + b * half, _mm256_blendv_pd(m0, m1, take_odd));
      const int mask = _mm256_movemask_pd(take_odd);
      for (int l = 0; l < 4; ++l)
        decisions[j + b * half + static_cast<std::size_t>(l)] = static_cast<std::uint8_t>((mask >> l) & 1);
    }
  }
  for (; j < half; ++j) {
    const double even = pm_in[2 * j];
    const double odd = pm_in[2 * j + 1];
    for (int b = 0; b < 2; ++b) {
      const double m0 = even + (signs.sign_a[b][0][j] * llr_a + signs.sign_b[b][0][j] * llr_b);
      const double m1 = odd + (signs.sign_a[b][1][j] * llr_a + signs.sign_b[b][1][j] * llr_b);
      const bool take_odd = m1 > m0;
      pm_out[j + b * half] = take_odd ? m1 : m0;
      decisions[j + b * half] = take_odd ? 1 : 0;
    }
  }
}

void weighted_product_avx2(const double* a, const double* b, const double* w, std::size_t n, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d ab = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    _mm256_storeu_pd(out + i, _mm256_mul_pd(ab, _mm256_loadu_pd(w + i)));
  }
  for (; i < n; ++i) out[i] = (a[i] * b[i]) * w[i];
}

}  // namespace

const Kernels kAvx2Kernels{llr_maxlog_avx2, acs_step_avx2, weighted_product_avx2};

}  // namespace tokcom::simd::detail
