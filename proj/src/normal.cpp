#include "gmq/normal.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "gmq/error.hpp"

namespace gmq {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Upper tail Q(a) = 1 - cdf(a) for a >= 0.
double upper_tail(double a) {
    constexpr double p = 0.2316419;
    constexpr double b1 = 0.319381530;
    constexpr double b2 = -0.356563782;
    constexpr double b3 = 1.781477937;
    constexpr double b4 = -1.821255978;
    constexpr double b5 = 1.330274429;
    const double t = 1.0 / (1.0 + p * a);
    const double poly = t * (b1 + t * (b2 + t * (b3 + t * (b4 + t * b5))));
    return std_normal_pdf(a) * poly;
}

double acklam(double u) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    constexpr double p_high = 1.0 - p_low;

    if (u < p_low) {
        const double q = std::sqrt(-2.0 * std::log(u));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (u <= p_high) {
        const double q = u - 0.5;
        const double r = q * q;
        return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
               (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }
    const double q = std::sqrt(-2.0 * std::log1p(-u));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
}

}  // namespace

double std_normal_pdf(double x) noexcept { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double std_normal_cdf(double x) {
    if (!std::isfinite(x)) throw DomainError("std_normal_cdf: non-finite argument");
    return x < 0.0 ? upper_tail(-x) : 1.0 - upper_tail(x);
}

double std_normal_quantile(double u) {
    if (!(u > 0.0 && u < 1.0)) {
        throw DomainError("std_normal_quantile: u = " + std::to_string(u) + " outside (0,1)");
    }
    if (u == 0.5) return 0.0;
    const double x = acklam(u);
    // Newton step; upper residuals use 1-u (exact for u > 0.5) to keep precision.
    const double resid = (u > 0.5 && x > 0.0) ? (1.0 - u) - upper_tail(x) : std_normal_cdf(x) - u;
    const double pdf = std_normal_pdf(x);
    if (pdf <= 0.0) return x;
    return x - resid / pdf;
}

}  // namespace gmq
