#include <cmath>
#include <cstdint>
#include <cstring>

#include "gmq/simd/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)
#define GMQ_HAVE_X86 1
#include <immintrin.h>
#else
#define GMQ_HAVE_X86 0
#endif

namespace gmq::simd {

#if GMQ_HAVE_X86

#define GMQ_AVX2 __attribute__((target("avx2,fma")))

namespace {

// exp on [-40, 0]: Cody-Waite reduction by ln2, degree-13 Taylor on |r| <= ln2/2.
constexpr double kLog2e = 1.4426950408889634074;
constexpr double kLn2Hi = 6.93147180369123816490e-01;
constexpr double kLn2Lo = 1.90821492927058770002e-10;
constexpr double kInvFact[14] = {1.0,
                                 1.0,
                                 1.0 / 2.0,
                                 1.0 / 6.0,
                                 1.0 / 24.0,
                                 1.0 / 120.0,
                                 1.0 / 720.0,
                                 1.0 / 5040.0,
                                 1.0 / 40320.0,
                                 1.0 / 362880.0,
                                 1.0 / 3628800.0,
                                 1.0 / 39916800.0,
                                 1.0 / 479001600.0,
                                 1.0 / 6227020800.0};
constexpr double kTanhClamp = 20.0;

// Scalar twin of the vector lane computation; bit-identical results so that
// tail elements match what a full vector would have produced.
double tanh_lane(double x) {
    const double ax = std::fmin(std::fabs(x), kTanhClamp);
    const double e = -2.0 * ax;
    const double n = std::nearbyint(e * kLog2e);
    double r = std::fma(-n, kLn2Hi, e);
    r = std::fma(-n, kLn2Lo, r);
    double p = kInvFact[13];
    for (int i = 12; i >= 0; --i) p = std::fma(p, r, kInvFact[i]);
    const std::int64_t bits = (static_cast<std::int64_t>(n) + 1023) << 52;
    double scale;
    std::memcpy(&scale, &bits, sizeof scale);
    const double t = p * scale;
    const double y = (1.0 - t) / (1.0 + t);
    return std::copysign(y, x);
}

GMQ_AVX2 inline __m256d tanh4(__m256d x) {
    const __m256d sign_mask = _mm256_set1_pd(-0.0);
    const __m256d ax = _mm256_min_pd(_mm256_andnot_pd(sign_mask, x), _mm256_set1_pd(kTanhClamp));
    const __m256d e = _mm256_mul_pd(_mm256_set1_pd(-2.0), ax);
    const __m256d n = _mm256_round_pd(_mm256_mul_pd(e, _mm256_set1_pd(kLog2e)),
                                      _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    const __m256d nneg = _mm256_xor_pd(n, sign_mask);
    __m256d r = _mm256_fmadd_pd(nneg, _mm256_set1_pd(kLn2Hi), e);
    r = _mm256_fmadd_pd(nneg, _mm256_set1_pd(kLn2Lo), r);
    __m256d p = _mm256_set1_pd(kInvFact[13]);
    for (int i = 12; i >= 0; --i) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kInvFact[i]));
    const __m128i n32 = _mm256_cvtpd_epi32(n);
    const __m256i n64 = _mm256_cvtepi32_epi64(n32);
    const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
    const __m256d t = _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d y = _mm256_div_pd(_mm256_sub_pd(one, t), _mm256_add_pd(one, t));
    return _mm256_or_pd(y, _mm256_and_pd(x, sign_mask));
}

// One row of C = A*B restricted to columns [j0, j0+4*W); W accumulators.
template <int W>
GMQ_AVX2 inline void gemm_nn_strip(std::size_t n, std::size_t k, const double* arow,
                                   const double* b, double* crow, std::size_t j0, bool accumulate) {
    __m256d acc[W];
    for (int w = 0; w < W; ++w) acc[w] = _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_broadcast_sd(arow + p);
        const double* bp = b + p * n + j0;
        for (int w = 0; w < W; ++w) acc[w] = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 4 * w), acc[w]);
    }
    for (int w = 0; w < W; ++w) {
        double* dst = crow + j0 + 4 * w;
        if (accumulate) {
            _mm256_storeu_pd(dst, _mm256_add_pd(_mm256_loadu_pd(dst), acc[w]));
        } else {
            _mm256_storeu_pd(dst, acc[w]);
        }
    }
}

GMQ_AVX2 void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
                      const double* b, double* c, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        std::size_t j = 0;
        for (; j + 16 <= n; j += 16) gemm_nn_strip<4>(n, k, arow, b, crow, j, accumulate);
        for (; j + 4 <= n; j += 4) gemm_nn_strip<1>(n, k, arow, b, crow, j, accumulate);
        for (; j < n; ++j) {
            double sum = 0.0;
            for (std::size_t p = 0; p < k; ++p) sum = std::fma(arow[p], b[p * n + j], sum);
            crow[j] = accumulate ? crow[j] + sum : sum;
        }
    }
}

GMQ_AVX2 inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

GMQ_AVX2 double dot(std::size_t n, const double* x, const double* y) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s = std::fma(x[i], y[i], s);
    return s;
}

GMQ_AVX2 void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
                          const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(k, arow, b + j * k);
    }
}

GMQ_AVX2 void axpy(std::size_t n, double alpha, const double* x, double* y) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

GMQ_AVX2 void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
                          const double* b, double* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            if (arow[i] != 0.0) axpy(n, arow[i], brow, c + i * n);
        }
    }
}

GMQ_AVX2 void tanh_forward(std::size_t n, const double* x, double* y) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, tanh4(_mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = tanh_lane(x[i]);
}

GMQ_AVX2 void tanh_backward(std::size_t n, const double* y, const double* gy, double* gx) {
    const __m256d one = _mm256_set1_pd(1.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d yv = _mm256_loadu_pd(y + i);
        const __m256d d = _mm256_fnmadd_pd(yv, yv, one);
        _mm256_storeu_pd(gx + i, _mm256_fmadd_pd(_mm256_loadu_pd(gy + i), d, _mm256_loadu_pd(gx + i)));
    }
    for (; i < n; ++i) gx[i] = std::fma(gy[i], std::fma(-y[i], y[i], 1.0), gx[i]);
}

GMQ_AVX2 void momentum_step(std::size_t n, double lr, double mu, const double* g, double* v,
                            double* p) {
    const __m256d muv = _mm256_set1_pd(mu);
    const __m256d nlr = _mm256_set1_pd(-lr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vv = _mm256_fmadd_pd(muv, _mm256_loadu_pd(v + i), _mm256_loadu_pd(g + i));
        _mm256_storeu_pd(v + i, vv);
        _mm256_storeu_pd(p + i, _mm256_fmadd_pd(nlr, vv, _mm256_loadu_pd(p + i)));
    }
    for (; i < n; ++i) {
        v[i] = std::fma(mu, v[i], g[i]);
        p[i] = std::fma(-lr, v[i], p[i]);
    }
}

}  // namespace

const Kernels* avx2_kernels() {
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    if (!supported) return nullptr;
    static const Kernels k{"avx2",  gemm_nn, gemm_nt_acc,  gemm_tn_acc,
                           axpy,    dot,     tanh_forward, tanh_backward,
                           momentum_step};
    return &k;
}

#else

const Kernels* avx2_kernels() { return nullptr; }

#endif

}  // namespace gmq::simd
