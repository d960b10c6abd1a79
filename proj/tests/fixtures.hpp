#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "gmq/dataset.hpp"
#include "gmq/rng.hpp"

namespace fixtures {

/// Small panel with one historical, one future and one static covariate.
/// y = level + 0.5 * future + noise * N(0,1) (level = 10 + series index).
inline gmq::SeriesDataset toy_dataset(std::size_t n_series, std::size_t length, std::size_t d, std::size_t h,
                                      double noise = 1.0, std::uint64_t seed = 1) {
    gmq::SeriesDataset ds;
    ds.name = "toy";
    ds.horizon = d;
    ds.history = h;
    ds.cut_stride = 2;
    ds.holdout = d;
    ds.hist_names = {"lagged"};
    ds.future_names = {"x"};
    ds.static_names = {"group"};
    gmq::RngState rng(seed);
    for (std::size_t s = 0; s < n_series; ++s) {
        gmq::Series se;
        se.id = "s" + std::to_string(s);
        se.future_cov = gmq::Tensor({length + d, 1});
        se.hist_cov = gmq::Tensor({length, 1});
        for (std::size_t t = 0; t < length + d; ++t) se.future_cov(t, 0) = std::sin(0.7 * static_cast<double>(t + s));
        for (std::size_t t = 0; t < length; ++t) {
            se.y.push_back(10.0 + static_cast<double>(s) + 0.5 * se.future_cov(t, 0) + noise * rng.normal());
            se.hist_cov(t, 0) = t > 0 ? se.y[t - 1] : 0.0;
        }
        se.static_cov = {static_cast<double>(s % 2)};
        ds.series.push_back(std::move(se));
    }
    return ds;
}

/// Fresh empty directory under the system temp path.
inline std::filesystem::path temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("gmq_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace fixtures
