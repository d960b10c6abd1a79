#pragma once

#include <cstddef>
#include <span>

#include "gmq/tensor.hpp"

namespace gmq {

/// Diagonal entries at or below this are treated as singular by the solver.
inline constexpr double kSingularDiagonal = 1e-12;

/// Solves L z = b by forward substitution for lower-triangular L [d,d].
/// Entries above the diagonal are ignored. Throws SingularMatrixError when a
/// diagonal entry is <= 1e-12 and ShapeError on mismatched sizes.
Tensor lower_tri_solve(const Tensor& lower, const Tensor& rhs);

/// Sum of log diagonal entries of lower-triangular L. Throws DomainError when
/// a diagonal entry is <= 0.
double log_det_lower_tri(const Tensor& lower);

/// Span-level kernels shared with the differentiable ops.
namespace tri {

/// z = L^{-1} b, L row-major d x d.
void solve_lower(std::size_t d, std::span<const double> lower, std::span<const double> rhs,
                 std::span<double> out);
/// z = L^{-T} b (back substitution on the transpose).
void solve_lower_transposed(std::size_t d, std::span<const double> lower,
                            std::span<const double> rhs, std::span<double> out);
/// out = L x for lower-triangular L.
void mul_lower(std::size_t d, std::span<const double> lower, std::span<const double> x,
               std::span<double> out);
void require_nonsingular(std::size_t d, std::span<const double> lower);

}  // namespace tri

}  // namespace gmq
