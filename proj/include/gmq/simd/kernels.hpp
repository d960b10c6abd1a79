#pragma once

#include <cstddef>
#include <string_view>

namespace gmq::simd {

// Dense kernels behind every matrix product and activation in the library.
// All matrices are row-major and contiguous. Each entry has a scalar
// reference implementation; wider variants must agree with it to rounding
// and must produce per-row results that do not depend on how many rows are
// passed in one call (sampling fan-out relies on this).
struct Kernels {
    std::string_view name;

    /// C[m,n] (+)= A[m,k] * B[k,n]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c, bool accumulate);
    /// C[m,n] += A[m,k] * B[n,k]^T
    void (*gemm_nt_acc)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c);
    /// C[m,n] += A[k,m]^T * B[k,n]
    void (*gemm_tn_acc)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c);
    /// y += alpha * x
    void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
    double (*dot)(std::size_t n, const double* x, const double* y);
    /// y = tanh(x); absolute error below 1e-15.
    void (*tanh_forward)(std::size_t n, const double* x, double* y);
    /// gx += gy * (1 - y^2)
    void (*tanh_backward)(std::size_t n, const double* y, const double* gy, double* gx);
    /// v = mu * v + g; p -= lr * v
    void (*momentum_step)(std::size_t n, double lr, double mu, const double* g, double* v,
                          double* p);
};

const Kernels& scalar_kernels();
/// nullptr when the build or the CPU lacks AVX2+FMA.
const Kernels* avx2_kernels();

/// Kernel table used by the library: the widest one the CPU supports, unless
/// the GMQ_SIMD environment variable is set to "scalar".
const Kernels& active();

}  // namespace gmq::simd
