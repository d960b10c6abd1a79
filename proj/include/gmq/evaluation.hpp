#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gmq/forecaster.hpp"
#include "gmq/tensor.hpp"

namespace gmq {

/// Target interval [t+l, t+l+s) in 1-based lead l and span s.
struct Interval {
    std::size_t l = 1;
    std::size_t s = 1;

    friend bool operator==(const Interval&, const Interval&) = default;
};

/// Default evaluation quantile set.
inline const std::vector<double> kEvaluationQuantiles{0.1, 0.3, 0.5, 0.7, 0.9, 0.95};

/// Every interval with l + s - 1 <= d, ordered by s then l: d(d+1)/2 cells.
std::vector<Interval> all_intervals(std::size_t d);

struct MeshSpec {
    std::size_t horizon = 0;
    std::vector<Interval> points;

    [[nodiscard]] bool contains(Interval iv) const;
    /// Throws DomainError on duplicates, out-of-range points or missing (l, 1) points.
    void validate() const;
};

/// All (l, 1) points, then (1, d), then the remaining intervals ranked by how
/// close l and s are to the ladders {2^k} and {3 * 2^k} (powers of two
/// first), ties by smaller s then smaller l, up to `budget` points. When the
/// budget covers every interval the mesh is exhaustive.
MeshSpec mesh_enumerate(std::size_t d, std::size_t budget);

/// Forecast value per (interval, u).
struct QuantileForecastTable {
    std::vector<Interval> cells;
    std::vector<double> u_set;
    Tensor values;  // [cells, U]

    [[nodiscard]] std::size_t index_of(Interval iv) const;
    [[nodiscard]] double at(Interval iv, std::size_t u_index) const { return values(index_of(iv), u_index); }
};

/// Sample quantile by linear interpolation between order statistics
/// (position (n-1) u). `sorted` must be ascending and non-empty.
double empirical_quantile(std::span<const double> sorted, double u);

/// Quantiles of per-path interval sums. Throws InsufficientDataError when
/// K < min_paths.
QuantileForecastTable interval_sum_quantiles(const ForecastPaths& paths, std::span<const Interval> cells,
                                             std::span<const double> u_set, std::size_t min_paths = 20);
QuantileForecastTable interval_sum_quantiles(const ForecastPaths& paths, const MeshSpec& mesh,
                                             std::span<const double> u_set, std::size_t min_paths = 20);

/// Marginal quantiles [d, U] from a direct-quantile row laid out as [d*U].
QuantileForecastTable marginal_table(std::span<const double> row, std::size_t d, std::span<const double> u_set);

/// Realized interval total y_[l, l+s) from a truth vector of length >= l+s-1.
double interval_total(std::span<const double> truth, Interval iv);

struct CrossingCounts {
    std::size_t q_cells = 0;
    std::size_t q_crossed = 0;
    std::size_t i_pairs = 0;
    std::size_t i_crossed = 0;

    CrossingCounts& operator+=(const CrossingCounts& o);
};

/// Q-X: cells with any adjacent-u decrease. I-X: same-l nested pairs
/// (l, s') within (l, s) with a lower forecast for the longer interval at
/// any u; only counted when `nonnegative`.
CrossingCounts crossing_counts(const QuantileForecastTable& table, bool nonnegative);

struct CrossingRates {
    double q_x = 0.0;
    /// Absent for signed data, where nesting implies no ordering.
    std::optional<double> i_x;
};

CrossingRates crossing_rates(const QuantileForecastTable& table, bool nonnegative = true);
CrossingRates crossing_rates(const CrossingCounts& counts, bool nonnegative);

struct QlCell {
    Interval cell;
    double u = 0.0;
    double forecast = 0.0;
    double truth = 0.0;
    double ql = 0.0;
};

/// QL per (cell, u) against a realized path. Throws AlignmentError if truth
/// does not cover the table's intervals.
std::vector<QlCell> interval_ql(const QuantileForecastTable& table, std::span<const double> truth);

/// One evaluated model: a table and the realized targets per forecast.
struct ModelTables {
    std::string model;
    std::vector<QuantileForecastTable> tables;
    std::vector<std::vector<double>> truths;
    bool nonnegative = false;
};

struct ReportRow {
    std::string model;
    std::string group;  // "(l,1)", "(1,s)" or "all"
    double u = 0.0;
    double mean_ql = 0.0;
    std::optional<double> scaled_ql;
    double q_x = 0.0;
    std::optional<double> i_x;
};

/// Mean QL per group and u over every forecast, with crossing rates over all
/// tables. With `baseline`, scaled_ql = mean_ql / baseline mean_ql for the
/// same group and u.
std::vector<ReportRow> interval_ql_report(const ModelTables& m, const std::vector<ReportRow>* baseline = nullptr);

/// CSV with header model,group,u,mean_QL,scaled_QL,q_x,i_x; absent values are empty.
std::string report_csv(std::span<const ReportRow> rows);

// ---- shifted Gamma baseline ---------------------------------------------

/// Regularized lower incomplete gamma P(a, x).
double regularized_gamma_p(double a, double x);
/// Quantile of Gamma(k, theta) by bisection on the CDF.
double gamma_quantile(double k, double theta, double u);

/// max(G - 1, 0) with G ~ Gamma(k, theta).
struct ShiftedGamma {
    double k = 1.0;
    double theta = 1.0;
};

double shifted_gamma_quantile(const ShiftedGamma& g, double u);

/// Matches shifted quantiles at 0.5 and 0.9. With p50 = 0 the shape is pinned
/// at `k_at_zero` and only p90 is matched.
ShiftedGamma fit_shifted_gamma(double p50, double p90, double k_at_zero = 0.5);

/// Fits a shifted Gamma per mesh cell from p50_p90 [cells, 2] and evaluates
/// it at u_set.
QuantileForecastTable mesh_gamma_table(const MeshSpec& mesh, const Tensor& p50_p90, std::span<const double> u_set);

// ---- interpolation ------------------------------------------------------

struct Interpolated {
    std::vector<double> values;  // one per u
    bool idw_fallback = false;
};

/// Exact at mesh points; otherwise barycentric over a triangle of nearby
/// mesh points containing the query (or, failing that, the nearest
/// non-collinear triple, extrapolating); inverse-distance weighting over
/// the nearest three when every candidate triple is collinear.
Interpolated mesh_interpolate(const QuantileForecastTable& mesh_table, Interval query);

/// Interpolates a mesh table onto `cells`.
QuantileForecastTable interpolate_table(const QuantileForecastTable& mesh_table, std::span<const Interval> cells,
                                        std::size_t* idw_count = nullptr);

}  // namespace gmq
