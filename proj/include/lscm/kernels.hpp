#pragma once

// Dense arithmetic kernels used by the training hot loops.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2/FMA
// variant. The variant is chosen once per process from CPUID (override with
// LSCM_ISA=scalar|avx2) so repeated calls in one process are bit-identical.
// All matrices are row-major and contiguous.

#include <cstddef>
#include <string_view>

namespace lscm::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  // C[m x n] (+)= A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c, bool accumulate);
  // C[m x n] (+)= A^T * B with A stored [k x m], B stored [k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c, bool accumulate);
  // C[m x n] (+)= A * B^T with A stored [m x k], B stored [n x k]
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c, bool accumulate);
  double (*dot)(std::size_t n, const double* x, const double* y);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  // out[i] = tanh(in[i]); in and out may alias
  void (*tanh)(std::size_t n, const double* in, double* out);
  // sum_i (a[i] - b[i])^2
  double (*sum_sq_diff)(std::size_t n, const double* a, const double* b);
};

const KernelTable& table(Isa isa);
bool isa_available(Isa isa);
Isa detected_isa();
Isa active_isa();
// Test hook; throws if the requested ISA is not available on this CPU.
void set_active_isa(Isa isa);
std::string_view isa_name(Isa isa);

inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c, bool accumulate) {
  table(active_isa()).gemm_nn(m, n, k, a, b, c, accumulate);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c, bool accumulate) {
  table(active_isa()).gemm_tn(m, n, k, a, b, c, accumulate);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c, bool accumulate) {
  table(active_isa()).gemm_nt(m, n, k, a, b, c, accumulate);
}
inline double dot(std::size_t n, const double* x, const double* y) {
  return table(active_isa()).dot(n, x, y);
}
inline void axpy(std::size_t n, double alpha, const double* x, double* y) {
  table(active_isa()).axpy(n, alpha, x, y);
}
inline void tanh(std::size_t n, const double* in, double* out) {
  table(active_isa()).tanh(n, in, out);
}
inline double sum_sq_diff(std::size_t n, const double* a, const double* b) {
  return table(active_isa()).sum_sq_diff(n, a, b);
}

}  // namespace lscm::kernels
