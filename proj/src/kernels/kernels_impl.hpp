#pragma once

#include "lscm/kernels.hpp"

namespace lscm::kernels {

namespace scalar {
extern const KernelTable table;
}

#if defined(__x86_64__) || defined(_M_X64)
#define LSCM_HAVE_AVX2_KERNELS 1
namespace avx2 {
extern const KernelTable table;
}
#endif

}  // namespace lscm::kernels
