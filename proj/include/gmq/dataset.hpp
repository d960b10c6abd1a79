#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gmq/tensor.hpp"

namespace gmq {

/// One time series with its covariates, in its own local time index.
struct Series {
    std::string id;
    std::vector<double> y;          // observed targets, length T
    Tensor hist_cov;                // [T, n_hist] known only up to the present
    Tensor future_cov;              // [T_f, n_fut], known ahead (T_f >= T)
    std::vector<double> static_cov; // [n_static]

    [[nodiscard]] std::size_t length() const noexcept { return y.size(); }
};

/// How targets are scaled before they reach the networks.
enum class StandardizeMode {
    Robust,  // per series (y - median) / MAD
    None,    // targets already on a common unit scale
};

/// Panel of series sharing horizon d, history window h and covariate schema.
///
/// Training cuts t (first unknown step) satisfy t >= min_history,
/// t = cut_offset (mod cut_stride) and t + d <= T - holdout. The default
/// forecast origin of a series is T - holdout.
struct SeriesDataset {
    std::string name;
    std::size_t horizon = 0;
    std::size_t history = 0;
    std::size_t cut_stride = 4;
    std::size_t cut_offset = 0;
    std::size_t min_history = 1;
    std::size_t holdout = 0;
    bool nonnegative = false;
    StandardizeMode standardize = StandardizeMode::Robust;
    std::vector<std::string> hist_names;
    std::vector<std::string> future_names;
    std::vector<std::string> static_names;
    std::vector<Series> series;

    [[nodiscard]] std::size_t n_hist() const noexcept { return hist_names.size(); }
    [[nodiscard]] std::size_t n_future() const noexcept { return future_names.size(); }
    [[nodiscard]] std::size_t n_static() const noexcept { return static_names.size(); }

    /// Throws FormatError/ShapeError/DomainError on schema violations or NaN.
    void validate() const;
    [[nodiscard]] std::size_t default_origin(std::size_t s) const;
    [[nodiscard]] std::size_t find(const std::string& id) const;
};

/// A forecast creation point: series index and first unknown step.
struct Cut {
    std::size_t series = 0;
    std::size_t origin = 0;
};

/// All training cuts in series-major order.
std::vector<Cut> training_cuts(const SeriesDataset& ds);
/// One cut per series at its default origin.
std::vector<Cut> origin_cuts(const SeriesDataset& ds);

/// Per-series robust standardization: (y - center) / scale.
struct Standardization {
    double center = 0.0;
    double scale = 1.0;

    [[nodiscard]] double apply(double y) const noexcept { return (y - center) / scale; }
    [[nodiscard]] double invert(double z) const noexcept { return center + scale * z; }
};

inline constexpr double kScaleFloor = 1e-6;

/// Median and median absolute deviation of `values`. When the MAD is below
/// kScaleFloor the mean absolute deviation is used; the result is floored at
/// kScaleFloor.
Standardization robust_standardization(std::span<const double> values);

/// Standardization from the training range [0, T - holdout) of one series
/// (identity when the dataset is not standardized).
Standardization series_standardization(const SeriesDataset& ds, std::size_t s);

/// Dense model inputs for a set of cuts.
struct CutFeatures {
    Tensor encoder_input;  // [N, encoder_width]
    Tensor future;         // [N, d * n_fut]
    Tensor targets;        // [N, d] standardized; NaN where the target is not observed
    std::vector<Standardization> standardization;
};

/// Encoder input width: h * (2 + n_hist) + n_static + 2.
std::size_t encoder_input_width(std::size_t history, std::size_t n_hist, std::size_t n_static);

/// History window (standardized y, historical covariates, padding mask),
/// static covariates and two scale descriptors; future covariates for each
/// horizon; standardized targets. Throws AlignmentError if a cut lacks
/// future covariates.
CutFeatures build_features(const SeriesDataset& ds, std::span<const Cut> cuts,
                           std::span<const Standardization> per_series);

}  // namespace gmq
