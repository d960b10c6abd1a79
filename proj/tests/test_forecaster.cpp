#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "gmq/error.hpp"
#include "gmq/forecaster.hpp"
#include "gmq/normal.hpp"
#include "gmq/rng.hpp"
#include "gmq/synthetic.hpp"

using namespace gmq;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

double ks_uniform(std::vector<double> u) {
    std::sort(u.begin(), u.end());
    const double n = static_cast<double>(u.size());
    double d = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        d = std::max({d, std::fabs((i + 1) / n - u[i]), std::fabs(u[i] - i / n)});
    return d;
}

std::vector<double> column(const Tensor& t, std::size_t c) {
    std::vector<double> out(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) out[r] = t(r, c);
    return out;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ModelConfig small_config(const SeriesDataset& ds) {
    ModelConfig mc = ModelConfig::for_dataset(ds);
    mc.encoder_hidden = 16;
    mc.embedding = 8;
    mc.qnet_hidden = {32, 32};
    mc.copula_hidden = 16;
    return mc;
}

struct Trained {
    SyntheticOutput data;
    GmqModel model;
    GmqModel independent;
};

/// Linear-Gaussian suite (rho 0.6) with a full model and a phase-1-only twin.
const Trained& trained() {
    static const Trained t = [] {
        LinearGaussianParams p;
        p.n_series = 200;
        Trained r{gen_linear_gaussian(p), {}, {}};
        GmqTrainConfig cfg;
        cfg.phase1.epochs = 30;
        cfg.phase1.batch_size = 64;
        cfg.phase2.epochs = 15;
        r.model = GmqModel(ModelConfig::for_dataset(r.data.dataset), 1);
        train_gmq(r.model, r.data.dataset, cfg);
        cfg.copula = false;
        r.independent = GmqModel(ModelConfig::for_dataset(r.data.dataset), 1);
        train_gmq(r.independent, r.data.dataset, cfg);
        return r;
    }();
    return t;
}

}  // namespace

TEST_SUITE("forecaster") {

TEST_CASE("contexts are local in future covariates and deterministic") {
    SeriesDataset ds = fixtures::toy_dataset(3, 40, 4, 8);
    const GmqModel model(small_config(ds), 7);
    const Cut cut{1, 20};
    const Tensor a = encode_contexts(model, ds, cut);
    CHECK(a.rows() == 4);
    CHECK(a.cols() == model.context_dim());
    CHECK(encode_contexts(model, ds, cut) == a);

    ds.series[1].future_cov(cut.origin + 3, 0) += 1.0;
    const Tensor b = encode_contexts(model, ds, cut);
    for (std::size_t i = 0; i < 4; ++i) {
        bool same = true;
        for (std::size_t j = 0; j < a.cols(); ++j) same = same && a(i, j) == b(i, j);
        CHECK(same == (i != 3));
    }
}

TEST_CASE("zero encoder weights leave only the horizon embedding varying") {
    SeriesDataset ds = fixtures::toy_dataset(2, 30, 4, 6);
    for (auto& s : ds.series) {
        std::fill(s.y.begin(), s.y.end(), 0.0);
        s.hist_cov.fill(0.0);
        s.future_cov.fill(0.0);
        s.static_cov.assign(1, 0.0);
    }
    ds.standardize = StandardizeMode::None;
    GmqModel model(small_config(ds), 3);
    for (auto& layer : model.encoder().layers()) {
        layer.weight.value.fill(0.0);
        layer.bias.value.fill(0.25);
    }
    const Tensor c = encode_contexts(model, ds, {0, 10});
    const std::size_t emb = model.config().embedding, hemb = model.config().horizon_embedding;
    for (std::size_t i = 1; i < 4; ++i) {
        for (std::size_t j = 0; j < emb; ++j) CHECK(c(i, j) == c(0, j));
        bool differs = false;
        for (std::size_t j = emb; j < emb + hemb; ++j) differs = differs || c(i, j) != c(0, j);
        CHECK(differs);
    }
}

TEST_CASE("seeded training is deterministic") {
    const SeriesDataset ds = fixtures::toy_dataset(4, 40, 4, 8);
    GmqTrainConfig cfg;
    cfg.phase1.epochs = 2;
    cfg.phase2.epochs = 2;
    auto run = [&] {
        GmqModel m(small_config(ds), 5);
        return train_gmq(m, ds, cfg).losses;
    };
    const LossHistory a = run(), b = run();
    CHECK(a.l1.size() == 2);
    CHECK(a.l3.size() == 2);
    CHECK(a.l1 == b.l1);
    CHECK(a.l2 == b.l2);
    CHECK(a.l3 == b.l3);

    GmqModel fresh(small_config(ds), 5);
    CHECK_THROWS_AS(train_gmq_copula(fresh, ds, cfg), Error);
}

TEST_CASE("constant series forecast their level") {
    SeriesDataset ds = fixtures::toy_dataset(6, 48, 4, 8);
    for (auto& s : ds.series) {
        std::fill(s.y.begin(), s.y.end(), 50.0);
        for (std::size_t t = 0; t < s.length(); ++t) s.hist_cov(t, 0) = t > 0 ? 50.0 : 0.0;
    }
    GmqModel model(small_config(ds), 2);
    GmqTrainConfig cfg;
    cfg.phase1.epochs = 20;
    cfg.phase1.batch_size = 16;
    cfg.copula = false;
    train_gmq(model, ds, cfg);
    for (const Cut& cut : origin_cuts(ds)) {
        const std::vector<double> med = direct_quantile_forecast(model, ds, cut, std::vector<double>(4, 0.5));
        for (double v : med) CHECK(std::fabs(v / 50.0 - 1.0) < 0.02);
    }
    CHECK_THROWS_AS(direct_quantile_forecast(model, ds, {0, 40}, std::vector<double>{0.5, 1.0, 0.5, 0.5}),
                    DomainError);
}

TEST_CASE("direct quantiles approach the closed form") {
    const Trained& t = trained();
    const SeriesDataset& ds = t.data.dataset;
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < ds.series.size(); ++s) {
        const Cut cut{s, ds.default_origin(s)};
        for (double u : {0.1, 0.9}) {
            const auto q = direct_quantile_forecast(t.model, ds, cut, std::vector<double>(8, u));
            for (std::size_t i = 0; i < 8; ++i, ++n) total += std::fabs(q[i] - t.data.suite.quantile(s, cut.origin + i, u));
        }
    }
    CHECK(total / static_cast<double>(n) < 0.15);
}

TEST_CASE("path medians agree with direct medians") {
    const Trained& t = trained();
    const SeriesDataset& ds = t.data.dataset;
    const Cut cut{3, ds.default_origin(3)};
    const ForecastPaths p = simulate_paths(t.model, ds, cut, 10000, 11);
    CHECK(p.paths() == 10000);
    CHECK(p.horizon() == 8);
    const auto direct = direct_quantile_forecast(t.model, ds, cut, std::vector<double>(8, 0.5));
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::fabs(median_of(column(p.samples, i)) - direct[i]) < 0.1);

    const ForecastPaths one = simulate_paths(t.model, ds, cut, 1, 4);
    CHECK(simulate_paths(t.model, ds, cut, 1, 4).samples == one.samples);
}

TEST_CASE("worker count does not change paths") {
    const Trained& t = trained();
    const std::vector<Cut> cuts = origin_cuts(t.data.dataset);
    const std::vector<Cut> some(cuts.begin(), cuts.begin() + 5);
    const auto a = simulate_paths(t.model, t.data.dataset, some, 50, 9, 1);
    const auto b = simulate_paths(t.model, t.data.dataset, some, 50, 9, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t n = 0; n < a.size(); ++n) {
        CHECK(a[n].samples == b[n].samples);
        CHECK(a[n].latents == b[n].latents);
    }
}

TEST_CASE("copula controls the across-horizon dependence of paths") {
    const Trained& t = trained();
    const SeriesDataset& ds = t.data.dataset;
    const Cut cut{5, ds.default_origin(5)};
    const ForecastPaths ind = simulate_paths(t.independent, ds, cut, 10000, 21);
    const ForecastPaths dep = simulate_paths(t.model, ds, cut, 10000, 21);
    double ind_worst = 0.0, dep_mean = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = i + 1; j < 8; ++j) {
            ind_worst = std::max(ind_worst, std::fabs(pearson(column(ind.samples, i), column(ind.samples, j))));
            dep_mean += pearson(column(dep.samples, i), column(dep.samples, j)) / 28.0;
        }
    }
    CHECK(ind_worst < 0.03);
    CHECK(dep_mean > 0.3);
}

TEST_CASE("anomaly scores") {
    const Trained& t = trained();
    const SeriesDataset& ds = t.data.dataset;
    const Cut cut{7, ds.default_origin(7)};
    const auto med = direct_quantile_forecast(t.model, ds, cut, std::vector<double>(8, 0.5));
    const AnomalyScore at_median = anomaly_score(t.model, ds, cut, med);
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::fabs(at_median.u_tilde[i] - 0.5) < 0.1);

    const double scale = t.model.standardization_for(ds)[7].scale;
    std::vector<double> spike = med;
    for (double& v : spike) v += 10.0 * scale;
    const AnomalyScore high = anomaly_score(t.model, ds, cut, spike);
    for (std::size_t i = 0; i < 8; ++i) CHECK(high.u_tilde[i] > 0.99);
    CHECK(high.joint > at_median.joint);

    // observations drawn from the model score uniformly
    const std::size_t n = 2000;
    const ForecastPaths p = simulate_paths(t.model, ds, cut, n, 31);
    const std::vector<Cut> cuts(n, cut);
    const auto scores = anomaly_scores(t.model, ds, cuts, p.samples);
    for (std::size_t i = 0; i < 8; ++i) {
        std::vector<double> u(n);
        for (std::size_t k = 0; k < n; ++k) u[k] = scores[k].u_tilde[i];
        CAPTURE(i);
        CHECK(ks_uniform(u) < 0.05);
    }
}

TEST_CASE("cross-series covariance") {
    RngState rng(41);
    const std::size_t n = 1000;
    Tensor rows({3, n});
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = rng.normal();

    const CrossSeriesCovariance raw = fit_cross_series(rows, 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::fabs(raw.s_hat(i, i) - 1.0) < 1e-10);
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) CHECK(std::fabs(raw.s_hat(i, j)) < 0.08);
    }

    Tensor same({2, n});
    for (std::size_t k = 0; k < n; ++k) same(0, k) = same(1, k) = rows(0, k);
    const CrossSeriesCovariance shrunk = fit_cross_series(same, 0.1);
    CHECK(std::fabs(shrunk.s_hat(0, 1) - 0.9) < 1e-10);
    CHECK(std::fabs(shrunk.s_hat(1, 0) - 0.9) < 1e-10);

    const CrossSeriesCovariance full = fit_cross_series(rows, 1.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(full.s_hat(i, j) == doctest::Approx(i == j ? 1.0 : 0.0));

    const CrossSeriesCovariance sparse = fit_cross_series(rows, 0.0, 0.5);
    CHECK(sparse.s_hat(0, 1) == 0.0);
    CHECK_THROWS_AS(fit_cross_series(Tensor({3, 1}, 1.0)), InsufficientDataError);
}

TEST_CASE("cross-series simulation") {
    const Trained& t = trained();
    const SeriesDataset& ds = t.data.dataset;
    const Cut cut{2, ds.default_origin(2)};
    const std::vector<Cut> cuts{cut, cut};
    const std::size_t k = 10000;

    CrossSeriesCovariance s;
    s.s_hat = Tensor::matrix(2, 2, {1.0, 0.9, 0.9, 1.0});
    const auto coupled = simulate_cross_series(t.model, ds, cuts, s, k, 51);
    REQUIRE(coupled.size() == 2);
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(std::fabs(pearson(column(coupled[0].latents, i), column(coupled[1].latents, i)) - 0.9) < 0.02);
    const auto again = simulate_cross_series(t.model, ds, cuts, s, k, 51);
    CHECK(again[1].samples == coupled[1].samples);

    s.s_hat = Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 1.0});
    const auto ind = simulate_cross_series(t.model, ds, cuts, s, k, 52);
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(std::fabs(pearson(column(ind[0].samples, i), column(ind[1].samples, i))) < 0.03);
    // marginals match the single-series simulator
    const ForecastPaths single = simulate_paths(t.model, ds, cut, k, 53);
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(std::fabs(median_of(column(ind[0].samples, i)) - median_of(column(single.samples, i))) < 0.1);

    s.s_hat = Tensor::matrix(2, 2, {1.0, 2.0, 2.0, 1.0});
    CHECK_THROWS_AS(simulate_cross_series(t.model, ds, cuts, s, 10, 1), DomainError);
}

}  // TEST_SUITE forecaster
