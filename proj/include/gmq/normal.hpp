#pragma once

namespace gmq {

/// Standard normal density exp(-x^2/2)/sqrt(2*pi).
double std_normal_pdf(double x) noexcept;

/// Standard normal CDF, Zelen-Severo rational approximation
/// (absolute error < 7.5e-8). Exactly symmetric: cdf(-x) + cdf(x) == 1
/// up to one rounding. Throws DomainError on non-finite input.
double std_normal_cdf(double x);

/// Inverse of std_normal_cdf on (0, 1): Acklam's rational approximation
/// followed by one Newton step against std_normal_cdf, so that
/// |cdf(quantile(u)) - u| < 1e-7. Throws DomainError unless 0 < u < 1.
double std_normal_quantile(double u);

}  // namespace gmq
