#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gmq/copula.hpp"
#include "gmq/dataset.hpp"

namespace gmq {

enum class NoiseKind { Gaussian, Poisson };

/// Ground truth behind a generated dataset.
///
/// Gaussian suites: y_t ~ N(location_t, 1) with the d steps of each block
/// equi-correlated at rho_t. Poisson suites: y_t ~ Poisson(location_t),
/// independent over time. Arrays are indexed by series, then local time,
/// and extend over the future-covariate range.
struct SyntheticSuite {
    std::string name;
    NoiseKind kind = NoiseKind::Gaussian;
    std::size_t horizon = 0;
    std::vector<std::pair<std::string, double>> params;
    std::vector<std::string> ids;
    std::vector<std::vector<double>> location;
    std::vector<std::vector<double>> rho;

    /// True conditional u-quantile of y at (series, time).
    [[nodiscard]] double quantile(std::size_t s, std::size_t t, double u) const;
    /// E[QL_u(y, q)] under the true law of y at (series, time).
    [[nodiscard]] double expected_ql(std::size_t s, std::size_t t, double u, double q) const;
    /// Expected QL of the true quantile.
    [[nodiscard]] double oracle_ql(std::size_t s, std::size_t t, double u) const;
    /// Copula of the d steps starting at `origin` (identity for Poisson suites).
    [[nodiscard]] CopulaFactor true_factor(std::size_t s, std::size_t origin) const;
    /// True u-quantile of the sum of y over steps origin+lead-1 .. origin+lead+span-2
    /// (1-based lead), with the copula of the block starting at `origin`.
    [[nodiscard]] double interval_quantile(std::size_t s, std::size_t origin, std::size_t lead, std::size_t span,
                                           double u) const;
    [[nodiscard]] double param(const std::string& key) const;
};

struct SyntheticOutput {
    SeriesDataset dataset;
    SyntheticSuite suite;
};

struct LinearGaussianParams {
    std::size_t n_series = 500;
    std::size_t horizon = 8;
    std::uint64_t seed = 1;
    double rho = 0.6;
    double slope = 2.0;
    /// Observed blocks of length d per series; one further block of
    /// covariates is emitted so the series can be forecast past its end.
    std::size_t blocks = 10;
};

/// Blocks of d steps; per block x ~ U(-1,1) (a future covariate, constant
/// over the block) and y_i = slope x + i/d + eps_i with equi-correlated unit
/// normal eps. Training cuts start at block boundaries.
SyntheticOutput gen_linear_gaussian(const LinearGaussianParams& p);

struct RegimeCopulaParams {
    std::size_t n_series = 500;
    std::size_t horizon = 8;
    std::uint64_t seed = 1;
    double rho_on = 0.8;
    double rho_off = 0.0;
    double slope = 2.0;
    std::size_t blocks = 10;
};

/// As gen_linear_gaussian with a second future covariate r in {0,1} per
/// block selecting the noise correlation (rho_on when r = 1).
SyntheticOutput gen_regime_copula(const RegimeCopulaParams& p);

struct SeasonalCountsParams {
    std::size_t n_series = 200;
    std::size_t horizon = 8;
    std::uint64_t seed = 1;
    std::size_t period = 52;
    std::size_t length = 156;
    std::size_t history = 52;
    double base_lo = 1.0;
    double base_hi = 3.0;
    double amplitude_lo = 0.3;
    double amplitude_hi = 0.8;
    double promo_rate = 0.1;
    double promo_lift = 0.7;
    /// Share of series that start late with fewer than `history` observations.
    double cold_start_fraction = 0.1;
    /// Multiplies every intensity; 0 gives all-zero series.
    double intensity_scale = 1.0;
};

/// Weekly Poisson counts with log-intensity base + amp sin(2 pi (t + phase) / period)
/// + lift * promo_t. Future covariates: the seasonal sine and cosine and the
/// promo indicator. Nonnegative.
SyntheticOutput gen_seasonal_counts(const SeasonalCountsParams& p);

/// Smallest k with P(Poisson(lambda) <= k) >= u.
double poisson_quantile(double lambda, double u);

/// E[QL_u(Y, q)] for Y ~ N(mean, sd^2): sd * (phi(a) + a (Phi(a) - u)), a = (q - mean) / sd.
double normal_expected_ql(double u, double mean, double sd, double q);

/// Cholesky factor of the d x d equi-correlation matrix with off-diagonal rho.
CopulaFactor equicorrelation_factor(std::size_t d, double rho);

}  // namespace gmq
