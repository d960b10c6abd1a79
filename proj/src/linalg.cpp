#include "gmq/linalg.hpp"

#include <cmath>
#include <string>

#include "gmq/error.hpp"

namespace gmq {

namespace tri {

void require_nonsingular(std::size_t d, std::span<const double> lower) {
    for (std::size_t i = 0; i < d; ++i) {
        const double v = lower[i * d + i];
        if (!(v > kSingularDiagonal)) {
            throw SingularMatrixError("lower-triangular factor has diagonal entry " +
                                      std::to_string(v) + " at row " + std::to_string(i));
        }
    }
}

void solve_lower(std::size_t d, std::span<const double> lower, std::span<const double> rhs,
                 std::span<double> out) {
    for (std::size_t i = 0; i < d; ++i) {
        double s = rhs[i];
        const double* row = lower.data() + i * d;
        for (std::size_t j = 0; j < i; ++j) s -= row[j] * out[j];
        out[i] = s / row[i];
    }
}

void solve_lower_transposed(std::size_t d, std::span<const double> lower,
                            std::span<const double> rhs, std::span<double> out) {
    for (std::size_t ii = d; ii-- > 0;) {
        double s = rhs[ii];
        for (std::size_t j = ii + 1; j < d; ++j) s -= lower[j * d + ii] * out[j];
        out[ii] = s / lower[ii * d + ii];
    }
}

void mul_lower(std::size_t d, std::span<const double> lower, std::span<const double> x,
               std::span<double> out) {
    for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j <= i; ++j) s += lower[i * d + j] * x[j];
        out[i] = s;
    }
}

}  // namespace tri

namespace {
std::size_t square_dim(const Tensor& m, const char* what) {
    if (m.rank() != 2 || m.shape()[0] != m.shape()[1]) {
        throw ShapeError(std::string(what) + ": expected square matrix, got " + m.shape_string());
    }
    return m.shape()[0];
}
}  // namespace

Tensor lower_tri_solve(const Tensor& lower, const Tensor& rhs) {
    const std::size_t d = square_dim(lower, "lower_tri_solve");
    if (rhs.size() != d) {
        throw ShapeError("lower_tri_solve: rhs " + rhs.shape_string() + " vs matrix " +
                         lower.shape_string());
    }
    tri::require_nonsingular(d, lower.span());
    Tensor out({d});
    tri::solve_lower(d, lower.span(), rhs.span(), out.span());
    return out;
}

double log_det_lower_tri(const Tensor& lower) {
    const std::size_t d = square_dim(lower, "log_det_lower_tri");
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double v = lower(i, i);
        if (!(v > 0.0)) {
            throw DomainError("log_det_lower_tri: non-positive diagonal at row " + std::to_string(i));
        }
        s += std::log(v);
    }
    return s;
}

}  // namespace gmq
