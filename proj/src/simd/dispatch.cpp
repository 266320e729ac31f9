#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "tokcom/simd.hpp"

namespace tokcom::simd {

namespace {

Isa detect() {
  if (const char* env = std::getenv("TOKCOM_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::Scalar;
    if (v == "avx2" && isa_available(Isa::Avx2)) return Isa::Avx2;
  }
  return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<int>& active_slot() {
  static std::atomic<int> slot{static_cast<int>(detect())};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2:
#if defined(TOKCOM_HAVE_AVX2)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return static_cast<Isa>(active_slot().load(std::memory_order_relaxed)); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) throw std::invalid_argument("ISA not available: " + std::string(isa_name(isa)));
  active_slot().store(static_cast<int>(isa), std::memory_order_relaxed);
}

const Kernels& kernels(Isa isa) {
#if defined(TOKCOM_HAVE_AVX2)
  if (isa == Isa::Avx2 && isa_available(Isa::Avx2)) return detail::kAvx2Kernels;
#endif
  (void)isa;
  return detail::kScalarKernels;
}

const Kernels& kernels() { return kernels(active_isa()); }

}  // namespace tokcom::simd
