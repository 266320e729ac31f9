#pragma once

// Data-parallel inner loops with a scalar reference and vector variants.
//
// Every variant performs the same IEEE operations in the same order per
// element (no FMA contraction, identical min/compare semantics), so results
// are bit-identical across instruction sets. Tests assert that equality.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace tokcom::simd {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);
bool isa_available(Isa isa);
/// Fastest available ISA, unless TOKCOM_SIMD=scalar|avx2 overrides it.
Isa active_isa();
/// Pin the ISA for the rest of the process (tests and benchmarks).
void set_active_isa(Isa isa);

/// Branch-metric sign tables for one butterfly ACS step of a rate-1/2 code.
/// Index [b][p][j]: new-state high bit b, predecessor parity p, butterfly j.
/// Branch metric = sign_a * llr_a + sign_b * llr_b.
struct AcsSigns {
  const double* sign_a[2][2];
  const double* sign_b[2][2];
};

struct Kernels {
  /// Max-log LLRs for `n` received symbols against an m-point constellation.
  /// out[i*bits + k] = clamp((min_{s: bit k = 1} |y_i - s|^2 - min_{s: bit k = 0} |y_i - s|^2) * inv_noise)
  /// Bit k is the k-th most significant bit of labels[s].
  void (*llr_maxlog)(const double* rx_re, const double* rx_im, std::size_t n, const double* pt_re,
                     const double* pt_im, const std::uint32_t* labels, std::size_t m, unsigned bits,
                     double inv_noise, double clamp, double* out);

  /// One add-compare-select step over `half` butterflies. Predecessors 2j and
  /// 2j+1 feed new states j (b = 0) and j + half (b = 1). Ties keep the even
  /// predecessor. decisions[s] = 1 when the odd predecessor survived.
  void (*acs_step)(const double* pm_in, double* pm_out, std::uint8_t* decisions, const AcsSigns& signs,
                   double llr_a, double llr_b, std::size_t half);

  /// out[i] = (a[i] * b[i]) * w[i].
  void (*weighted_product)(const double* a, const double* b, const double* w, std::size_t n, double* out);
};

const Kernels& kernels();
const Kernels& kernels(Isa isa);

namespace detail {
extern const Kernels kScalarKernels;
#if defined(TOKCOM_HAVE_AVX2)
extern const Kernels kAvx2Kernels;
#endif
}  // namespace detail

}  // namespace tokcom::simd
