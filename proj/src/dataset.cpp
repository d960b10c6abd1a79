#include "gmq/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gmq/error.hpp"

namespace gmq {

namespace {

double median_of(std::vector<double> v) {
    const std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void SeriesDataset::validate() const {
    if (horizon == 0) throw FormatError("dataset '" + name + "': horizon must be >= 1");
    if (cut_stride == 0) throw FormatError("dataset '" + name + "': cut_stride must be >= 1");
    if (series.empty()) throw FormatError("dataset '" + name + "': no series");
    for (const Series& s : series) {
        const std::string where = "series '" + s.id + "'";
        const std::size_t t = s.length();
        if (t == 0) throw FormatError(where + ": empty");
        if (s.hist_cov.size() != t * n_hist()) throw ShapeError(where + ": historical covariates do not match length");
        if (n_future() > 0 && (s.future_cov.rank() != 2 || s.future_cov.cols() != n_future())) {
            throw ShapeError(where + ": future covariate width mismatch");
        }
        if (s.future_cov.rows() < t && n_future() > 0) throw ShapeError(where + ": future covariates shorter than series");
        if (s.static_cov.size() != n_static()) throw ShapeError(where + ": static covariate count mismatch");
        for (double v : s.y) {
            if (!std::isfinite(v)) throw DomainError(where + ": non-finite target");
            if (nonnegative && v < 0.0) throw DomainError(where + ": negative target in nonnegative dataset");
        }
        if (!s.hist_cov.all_finite() || !s.future_cov.all_finite()) throw DomainError(where + ": NaN covariate");
        for (double v : s.static_cov) {
            if (!std::isfinite(v)) throw DomainError(where + ": NaN static covariate");
        }
        if (t <= holdout) throw FormatError(where + ": shorter than holdout");
    }
}

std::size_t SeriesDataset::default_origin(std::size_t s) const { return series.at(s).length() - holdout; }

std::size_t SeriesDataset::find(const std::string& id) const {
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (series[i].id == id) return i;
    }
    throw AlignmentError("unknown series id '" + id + "'");
}

std::vector<Cut> training_cuts(const SeriesDataset& ds) {
    std::vector<Cut> cuts;
    for (std::size_t s = 0; s < ds.series.size(); ++s) {
        const std::size_t t_len = ds.series[s].length();
        if (t_len < ds.holdout + ds.horizon) continue;
        const std::size_t last = t_len - ds.holdout - ds.horizon;
        for (std::size_t t = ds.cut_offset; t <= last; t += ds.cut_stride) {
            if (t >= ds.min_history) cuts.push_back({s, t});
        }
    }
    return cuts;
}

std::vector<Cut> origin_cuts(const SeriesDataset& ds) {
    std::vector<Cut> cuts;
    for (std::size_t s = 0; s < ds.series.size(); ++s) cuts.push_back({s, ds.default_origin(s)});
    return cuts;
}

Standardization robust_standardization(std::span<const double> values) {
    if (values.empty()) return {0.0, 1.0};
    std::vector<double> v(values.begin(), values.end());
    const double center = median_of(v);
    std::vector<double> dev(v.size());
    double mean_abs = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        dev[i] = std::fabs(v[i] - center);
        mean_abs += dev[i];
    }
    mean_abs /= static_cast<double>(v.size());
    double scale = median_of(std::move(dev));
    if (scale < kScaleFloor) scale = mean_abs;
    return {center, std::max(scale, kScaleFloor)};
}

Standardization series_standardization(const SeriesDataset& ds, std::size_t s) {
    if (ds.standardize == StandardizeMode::None) return {0.0, 1.0};
    const Series& ser = ds.series.at(s);
    const std::size_t n = ser.length() > ds.holdout ? ser.length() - ds.holdout : ser.length();
    return robust_standardization(std::span<const double>(ser.y.data(), n));
}

std::size_t encoder_input_width(std::size_t history, std::size_t n_hist, std::size_t n_static) {
    return history * (2 + n_hist) + n_static + 2;
}

CutFeatures build_features(const SeriesDataset& ds, std::span<const Cut> cuts,
                           std::span<const Standardization> per_series) {
    const std::size_t n = cuts.size();
    const std::size_t d = ds.horizon;
    const std::size_t h = ds.history;
    const std::size_t nh = ds.n_hist();
    const std::size_t nf = ds.n_future();
    const std::size_t ns = ds.n_static();
    const std::size_t width = encoder_input_width(h, nh, ns);
    if (per_series.size() != ds.series.size()) throw ShapeError("build_features: one standardization per series required");

    CutFeatures out;
    out.encoder_input = Tensor({n, width});
    out.future = Tensor({n, d * nf});
    out.targets = Tensor({n, d}, std::numeric_limits<double>::quiet_NaN());
    out.standardization.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const Cut& cut = cuts[r];
        const Series& s = ds.series.at(cut.series);
        const Standardization& st = per_series[cut.series];
        out.standardization.push_back(st);
        if (cut.origin > s.length()) throw AlignmentError("cut beyond end of series '" + s.id + "'");
        if (nf > 0 && cut.origin + d > s.future_cov.rows()) {
            throw AlignmentError("series '" + s.id + "': future covariates missing for origin " + std::to_string(cut.origin));
        }
        double* enc = out.encoder_input.data() + r * width;
        // Layout: [y_std(h) | mask(h) | hist(h*nh) | static(ns) | asinh(center/scale), asinh(log scale)]
        for (std::size_t k = 0; k < h; ++k) {
            const std::ptrdiff_t tau = static_cast<std::ptrdiff_t>(cut.origin) - static_cast<std::ptrdiff_t>(h) +
                                       static_cast<std::ptrdiff_t>(k);
            if (tau >= 0) {
                const auto t = static_cast<std::size_t>(tau);
                enc[k] = st.apply(s.y[t]);
                for (std::size_t j = 0; j < nh; ++j) enc[2 * h + k * nh + j] = s.hist_cov(t, j);
            } else {
                enc[h + k] = 1.0;
            }
        }
        for (std::size_t j = 0; j < ns; ++j) enc[h * (2 + nh) + j] = s.static_cov[j];
        enc[width - 2] = std::asinh(st.center / st.scale);
        enc[width - 1] = std::asinh(std::log(st.scale));
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < nf; ++j) out.future(r, i * nf + j) = s.future_cov(cut.origin + i, j);
            if (cut.origin + i < s.length()) out.targets(r, i) = st.apply(s.y[cut.origin + i]);
        }
    }
    return out;
}

}  // namespace gmq
