#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_impl.hpp"

namespace lscm::kernels {
namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("LSCM_ISA")) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && isa_available(Isa::avx2)) return Isa::avx2;
  }
  return detected_isa();
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#ifdef LSCM_HAVE_AVX2_KERNELS
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa detected_isa() { return isa_available(Isa::avx2) ? Isa::avx2 : Isa::scalar; }

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw std::runtime_error("kernel ISA not available: " + std::string(isa_name(isa)));
  }
  active().store(isa, std::memory_order_relaxed);
}

const KernelTable& table(Isa isa) {
#ifdef LSCM_HAVE_AVX2_KERNELS
  if (isa == Isa::avx2) return avx2::table;
#endif
  (void)isa;
  return scalar::table;
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace lscm::kernels
