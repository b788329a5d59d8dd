// Compiled with -mavx2 -mfma; only reached after a CPUID check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "kernels_impl.hpp"

namespace lscm::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// A kDepth x kPanel slice of B (256 KiB) stays in L2 while the rows stream past.
constexpr std::size_t kPanel = 256;
constexpr std::size_t kDepth = 128;

// C += A * B where A(i, p) = a[i * row_stride + p * col_stride]. Covers both
// the plain and the transposed-A layouts.
void gemm_block(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t row_stride, std::size_t col_stride, const double* b, double* c) {
  for (std::size_t jb = 0; jb < n; jb += kPanel) {
    const std::size_t jend = std::min(n, jb + kPanel);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      const double* a0 = a + (i + 0) * row_stride;
      const double* a1 = a + (i + 1) * row_stride;
      const double* a2 = a + (i + 2) * row_stride;
      const double* a3 = a + (i + 3) * row_stride;
      double* c0 = c + (i + 0) * n;
      double* c1 = c + (i + 1) * n;
      double* c2 = c + (i + 2) * n;
      double* c3 = c + (i + 3) * n;
      std::size_t j = jb;
      for (; j + 8 <= jend; j += 8) {
        __m256d r00 = _mm256_loadu_pd(c0 + j), r01 = _mm256_loadu_pd(c0 + j + 4);
        __m256d r10 = _mm256_loadu_pd(c1 + j), r11 = _mm256_loadu_pd(c1 + j + 4);
        __m256d r20 = _mm256_loadu_pd(c2 + j), r21 = _mm256_loadu_pd(c2 + j + 4);
        __m256d r30 = _mm256_loadu_pd(c3 + j), r31 = _mm256_loadu_pd(c3 + j + 4);
        for (std::size_t p = 0; p < k; ++p) {
          const double* bp = b + p * n + j;
          const __m256d b0 = _mm256_loadu_pd(bp);
          const __m256d b1 = _mm256_loadu_pd(bp + 4);
          __m256d av = _mm256_broadcast_sd(a0 + p * col_stride);
          r00 = _mm256_fmadd_pd(av, b0, r00);
          r01 = _mm256_fmadd_pd(av, b1, r01);
          av = _mm256_broadcast_sd(a1 + p * col_stride);
          r10 = _mm256_fmadd_pd(av, b0, r10);
          r11 = _mm256_fmadd_pd(av, b1, r11);
          av = _mm256_broadcast_sd(a2 + p * col_stride);
          r20 = _mm256_fmadd_pd(av, b0, r20);
          r21 = _mm256_fmadd_pd(av, b1, r21);
          av = _mm256_broadcast_sd(a3 + p * col_stride);
          r30 = _mm256_fmadd_pd(av, b0, r30);
          r31 = _mm256_fmadd_pd(av, b1, r31);
        }
        _mm256_storeu_pd(c0 + j, r00);
        _mm256_storeu_pd(c0 + j + 4, r01);
        _mm256_storeu_pd(c1 + j, r10);
        _mm256_storeu_pd(c1 + j + 4, r11);
        _mm256_storeu_pd(c2 + j, r20);
        _mm256_storeu_pd(c2 + j + 4, r21);
        _mm256_storeu_pd(c3 + j, r30);
        _mm256_storeu_pd(c3 + j + 4, r31);
      }
      for (; j + 4 <= jend; j += 4) {
        __m256d r0 = _mm256_loadu_pd(c0 + j);
        __m256d r1 = _mm256_loadu_pd(c1 + j);
        __m256d r2 = _mm256_loadu_pd(c2 + j);
        __m256d r3 = _mm256_loadu_pd(c3 + j);
        for (std::size_t p = 0; p < k; ++p) {
          const __m256d bv = _mm256_loadu_pd(b + p * n + j);
          r0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + p * col_stride), bv, r0);
          r1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + p * col_stride), bv, r1);
          r2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + p * col_stride), bv, r2);
          r3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + p * col_stride), bv, r3);
        }
        _mm256_storeu_pd(c0 + j, r0);
        _mm256_storeu_pd(c1 + j, r1);
        _mm256_storeu_pd(c2 + j, r2);
        _mm256_storeu_pd(c3 + j, r3);
      }
      for (; j < jend; ++j) {
        double s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
        for (std::size_t p = 0; p < k; ++p) {
          const double bv = b[p * n + j];
          s0 = std::fma(a0[p * col_stride], bv, s0);
          s1 = std::fma(a1[p * col_stride], bv, s1);
          s2 = std::fma(a2[p * col_stride], bv, s2);
          s3 = std::fma(a3[p * col_stride], bv, s3);
        }
        c0[j] = s0;
        c1[j] = s1;
        c2[j] = s2;
        c3[j] = s3;
      }
    }
    for (; i < m; ++i) {
      const double* ai = a + i * row_stride;
      double* ci = c + i * n;
      std::size_t j = jb;
      for (; j + 4 <= jend; j += 4) {
        __m256d r = _mm256_loadu_pd(ci + j);
        for (std::size_t p = 0; p < k; ++p) {
          r = _mm256_fmadd_pd(_mm256_broadcast_sd(ai + p * col_stride),
                              _mm256_loadu_pd(b + p * n + j), r);
        }
        _mm256_storeu_pd(ci + j, r);
      }
      for (; j < jend; ++j) {
        double s = ci[j];
        for (std::size_t p = 0; p < k; ++p) s = std::fma(ai[p * col_stride], b[p * n + j], s);
        ci[j] = s;
      }
    }
  }
}

void gemm_core(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t row_stride, std::size_t col_stride, const double* b, double* c) {
  for (std::size_t pb = 0; pb < k; pb += kDepth) {
    const std::size_t kk = std::min(kDepth, k - pb);
    gemm_block(m, n, kk, a + pb * col_stride, row_stride, col_stride, b + pb * n, c);
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  gemm_core(m, n, k, a, k, 1, b, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  gemm_core(m, n, k, a, 1, m, b, c);
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

// Four rows of B per pass so each A row is streamed once per four outputs.
// Tall products pay for one transposed copy of B and take the blocked path.
constexpr std::size_t kTransposeRows = 32;

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (m >= kTransposeRows && k >= 4) {
    thread_local std::vector<double> bt;
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    gemm_core(m, n, k, a, k, 1, bt.data(), c);
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + (j + 0) * k;
      const double* b1 = b + (j + 1) * k;
      const double* b2 = b + (j + 2) * k;
      const double* b3 = b + (j + 3) * k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d av = _mm256_loadu_pd(ai + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
      for (; p < k; ++p) {
        t0 = std::fma(ai[p], b0[p], t0);
        t1 = std::fma(ai[p], b1[p], t1);
        t2 = std::fma(ai[p], b2[p], t2);
        t3 = std::fma(ai[p], b3[p], t3);
      }
      if (accumulate) {
        ci[j] += t0;
        ci[j + 1] += t1;
        ci[j + 2] += t2;
        ci[j + 3] += t3;
      } else {
        ci[j] = t0;
        ci[j + 1] = t1;
        ci[j + 2] = t2;
        ci[j + 3] = t3;
      }
    }
    for (; j < n; ++j) {
      const double s = dot(k, ai, b + j * k);
      ci[j] = accumulate ? ci[j] + s : s;
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

// Horner evaluation helpers.
inline __m256d poly2(__m256d x, double c0, double c1, double c2) {
  return _mm256_fmadd_pd(_mm256_fmadd_pd(_mm256_set1_pd(c0), x, _mm256_set1_pd(c1)), x,
                         _mm256_set1_pd(c2));
}
inline __m256d poly3(__m256d x, double c0, double c1, double c2, double c3) {
  return _mm256_fmadd_pd(poly2(x, c0, c1, c2), x, _mm256_set1_pd(c3));
}

// exp(x) for x in [0, 45]: Cephes range reduction and (3,3) Pade form.
inline __m256d exp_nonneg(__m256d x) {
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634073599)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, _mm256_set1_pd(6.93145751953125E-1), x);
  r = _mm256_fnmadd_pd(n, _mm256_set1_pd(1.42860682030941723212E-6), r);
  const __m256d rr = _mm256_mul_pd(r, r);
  const __m256d px = _mm256_mul_pd(
      r, poly2(rr, 1.26177193074810590878E-4, 3.02994407707441961300E-2,
               9.99999999999999999910E-1));
  const __m256d qx = poly3(rr, 3.00198505138664455042E-6, 2.52448340349684104192E-3,
                           2.27265548208155028766E-1, 2.00000000000000000009E0);
  __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), e, _mm256_set1_pd(1.0));
  // 2^n through the exponent field; the magic constant extracts n as int64.
  const __m256d magic = _mm256_set1_pd(6755399441055744.0);
  const __m256i ni =
      _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(n, magic)), _mm256_castpd_si256(magic));
  const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(e, _mm256_castsi256_pd(bits));
}

// Cephes tanh: rational form below 0.625, 1 - 2/(exp(2|x|) + 1) above.
inline __m256d tanh_pd(__m256d x) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d ax = _mm256_andnot_pd(sign_mask, x);
  const __m256d sign = _mm256_and_pd(sign_mask, x);

  const __m256d two_ax = _mm256_min_pd(_mm256_add_pd(ax, ax), _mm256_set1_pd(44.0));
  const __m256d s = exp_nonneg(two_ax);
  __m256d big = _mm256_sub_pd(_mm256_set1_pd(1.0),
                              _mm256_div_pd(_mm256_set1_pd(2.0),
                                            _mm256_add_pd(s, _mm256_set1_pd(1.0))));
  big = _mm256_or_pd(big, sign);

  const __m256d z = _mm256_mul_pd(x, x);
  const __m256d num = poly2(z, -9.64399179425052238628E-1, -9.92877231001918586564E1,
                            -1.61468768441708447952E3);
  const __m256d den = _mm256_fmadd_pd(
      _mm256_fmadd_pd(_mm256_add_pd(z, _mm256_set1_pd(1.12811678491632931402E2)), z,
                      _mm256_set1_pd(2.23548839060100448583E3)),
      z, _mm256_set1_pd(4.84406305325125486048E3));
  const __m256d small = _mm256_fmadd_pd(_mm256_mul_pd(x, z), _mm256_div_pd(num, den), x);

  const __m256d use_small = _mm256_cmp_pd(ax, _mm256_set1_pd(0.625), _CMP_LT_OQ);
  const __m256d out = _mm256_blendv_pd(big, small, use_small);
  return _mm256_blendv_pd(out, x, _mm256_cmp_pd(x, x, _CMP_UNORD_Q));  // nan in, nan out
}

void tanh(std::size_t n, const double* in, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, tanh_pd(_mm256_loadu_pd(in + i)));
  if (i < n) {
    alignas(32) double buf[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t t = 0; i + t < n; ++t) buf[t] = in[i + t];
    _mm256_store_pd(buf, tanh_pd(_mm256_load_pd(buf)));
    for (std::size_t t = 0; i + t < n; ++t) out[i + t] = buf[t];
  }
}

double sum_sq_diff(std::size_t n, const double* a, const double* b) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d r0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    const __m256d r1 = _mm256_sub_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4));
    s0 = _mm256_fmadd_pd(r0, r0, s0);
    s1 = _mm256_fmadd_pd(r1, r1, s1);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) {
    const double r = a[i] - b[i];
    s = std::fma(r, r, s);
  }
  return s;
}

}  // namespace

const KernelTable table{gemm_nn, gemm_tn, gemm_nt, dot, axpy, tanh, sum_sq_diff};

}  // namespace lscm::kernels::avx2
