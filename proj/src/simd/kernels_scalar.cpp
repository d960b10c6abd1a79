#include <cmath>

#include "gmq/simd/kernels.hpp"

namespace gmq::simd {

namespace {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            double sum = 0.0;
            for (std::size_t p = 0; p < k; ++p) sum += arow[p] * b[p * n + j];
            crow[j] = accumulate ? crow[j] + sum : sum;
        }
    }
}

void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double sum = 0.0;
            for (std::size_t p = 0; p < k; ++p) sum += arow[p] * brow[p];
            c[i * n + j] += sum;
        }
    }
}

void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot(std::size_t n, const double* x, const double* y) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

void tanh_forward(std::size_t n, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

void tanh_backward(std::size_t n, const double* y, const double* gy, double* gx) {
    for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * (1.0 - y[i] * y[i]);
}

void momentum_step(std::size_t n, double lr, double mu, const double* g, double* v, double* p) {
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = mu * v[i] + g[i];
        p[i] -= lr * v[i];
    }
}

}  // namespace

const Kernels& scalar_kernels() {
    static const Kernels k{"scalar",  gemm_nn, gemm_nt_acc,   gemm_tn_acc,
                           axpy,      dot,     tanh_forward,  tanh_backward,
                           momentum_step};
    return k;
}

}  // namespace gmq::simd
