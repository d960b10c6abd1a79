#include "gmq/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "gmq/error.hpp"
#include "gmq/linalg.hpp"
#include "gmq/normal.hpp"
#include "gmq/rng.hpp"

namespace gmq {

namespace {

std::string series_id(const char* prefix, std::uint64_t seed, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%llu-%04zu", prefix, static_cast<unsigned long long>(seed), i);
    return buf;
}

void check_rho(double rho, const char* what) {
    if (!(std::fabs(rho) < 1.0)) throw DomainError(std::string(what) + " must satisfy |rho| < 1");
}

struct BlockSpec {
    const char* prefix;
    const char* name;
    std::size_t n_series;
    std::size_t d;
    std::uint64_t seed;
    double slope;
    std::size_t blocks;
    bool regime;
    double rho_on;
    double rho_off;
};

SyntheticOutput gen_blocks(const BlockSpec& b) {
    if (b.d == 0) throw DomainError("synthetic: horizon must be >= 1");
    if (b.blocks < 2) throw DomainError("synthetic: at least two blocks per series required");
    const std::size_t d = b.d;
    const std::size_t t_obs = b.blocks * d;
    const std::size_t t_fut = t_obs + d;
    const CopulaFactor l_on = equicorrelation_factor(d, b.rho_on);
    const CopulaFactor l_off = equicorrelation_factor(d, b.rho_off);

    SyntheticOutput out;
    SeriesDataset& ds = out.dataset;
    ds.name = b.name;
    ds.horizon = d;
    ds.history = d;
    ds.cut_stride = d;
    ds.cut_offset = 0;
    ds.min_history = 0;
    ds.holdout = d;
    ds.nonnegative = false;
    ds.standardize = StandardizeMode::None;
    ds.future_names = {"x"};
    if (b.regime) ds.future_names.push_back("r");

    SyntheticSuite& su = out.suite;
    su.name = b.name;
    su.kind = NoiseKind::Gaussian;
    su.horizon = d;

    const RngState root(b.seed, 1);
    std::vector<double> z(d), eps(d);
    for (std::size_t s = 0; s < b.n_series; ++s) {
        RngState rng = root.split(s);
        Series ser;
        ser.id = series_id(b.prefix, b.seed, s);
        ser.y.resize(t_obs);
        ser.hist_cov = Tensor({t_obs, 0});
        ser.future_cov = Tensor({t_fut, ds.n_future()});
        std::vector<double> loc(t_fut), rho(t_fut);
        for (std::size_t blk = 0; blk <= b.blocks; ++blk) {
            const double x = rng.uniform(-1.0, 1.0);
            const bool on = b.regime ? rng.uniform() < 0.5 : true;
            const CopulaFactor& lf = on ? l_on : l_off;
            for (std::size_t i = 0; i < d; ++i) z[i] = rng.normal();
            tri::mul_lower(d, lf.lower().span(), z, eps);
            for (std::size_t i = 0; i < d; ++i) {
                const std::size_t t = blk * d + i;
                loc[t] = b.slope * x + static_cast<double>(i) / static_cast<double>(d);
                rho[t] = on ? b.rho_on : b.rho_off;
                ser.future_cov(t, 0) = x;
                if (b.regime) ser.future_cov(t, 1) = on ? 1.0 : 0.0;
                if (t < t_obs) ser.y[t] = loc[t] + eps[i];
            }
        }
        su.ids.push_back(ser.id);
        su.location.push_back(std::move(loc));
        su.rho.push_back(std::move(rho));
        ds.series.push_back(std::move(ser));
    }
    return out;
}

}  // namespace

// ---- oracle ---------------------------------------------------------------

double poisson_quantile(double lambda, double u) {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("poisson_quantile: u outside (0,1)");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("poisson_quantile: lambda must be >= 0");
    if (lambda == 0.0) return 0.0;
    double p = std::exp(-lambda);
    double cdf = p;
    double k = 0.0;
    // Fixed upper limit keeps the loop bounded when u is within rounding of 1.
    const double limit = lambda + 40.0 * std::sqrt(lambda) + 100.0;
    while (cdf < u && k < limit) {
        k += 1.0;
        p *= lambda / k;
        cdf += p;
    }
    return k;
}

double normal_expected_ql(double u, double mean, double sd, double q) {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("normal_expected_ql: u outside (0,1)");
    if (!(sd > 0.0)) throw DomainError("normal_expected_ql: sd must be positive");
    const double a = (q - mean) / sd;
    return sd * (std_normal_pdf(a) + a * (std_normal_cdf(a) - u));
}

CopulaFactor equicorrelation_factor(std::size_t d, double rho) {
    check_rho(rho, "equicorrelation_factor");
    if (d == 0) throw DomainError("equicorrelation_factor: d = 0");
    Tensor l({d, d});
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = i == j ? 1.0 : rho;
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (!(s > 0.0)) throw DomainError("equicorrelation_factor: matrix not positive definite");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    // Rows have unit norm up to rounding; renormalize so the factor invariants hold tightly.
    for (std::size_t i = 0; i < d; ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j <= i; ++j) n2 += l(i, j) * l(i, j);
        const double inv = 1.0 / std::sqrt(n2);
        for (std::size_t j = 0; j <= i; ++j) l(i, j) *= inv;
    }
    return CopulaFactor(std::move(l));
}

double SyntheticSuite::quantile(std::size_t s, std::size_t t, double u) const {
    const double loc = location.at(s).at(t);
    if (kind == NoiseKind::Gaussian) return loc + std_normal_quantile(u);
    return poisson_quantile(loc, u);
}

double SyntheticSuite::expected_ql(std::size_t s, std::size_t t, double u, double q) const {
    const double loc = location.at(s).at(t);
    if (kind == NoiseKind::Gaussian) return normal_expected_ql(u, loc, 1.0, q);
    if (!(u > 0.0 && u < 1.0)) throw DomainError("expected_ql: u outside (0,1)");
    if (loc == 0.0) return q > 0.0 ? (1.0 - u) * q : u * -q;
    const double limit = loc + 40.0 * std::sqrt(loc) + 100.0;
    double p = std::exp(-loc);
    double e = 0.0;
    for (double k = 0.0; k <= limit; k += 1.0) {
        if (k > 0.0) p *= loc / k;
        const double diff = k - q;
        e += p * (diff > 0.0 ? u * diff : (u - 1.0) * diff);
    }
    return e;
}

double SyntheticSuite::oracle_ql(std::size_t s, std::size_t t, double u) const {
    return expected_ql(s, t, u, quantile(s, t, u));
}

CopulaFactor SyntheticSuite::true_factor(std::size_t s, std::size_t origin) const {
    if (kind == NoiseKind::Poisson) return CopulaFactor::identity(horizon);
    return equicorrelation_factor(horizon, rho.at(s).at(origin));
}

double SyntheticSuite::interval_quantile(std::size_t s, std::size_t origin, std::size_t lead, std::size_t span,
                                         double u) const {
    if (lead < 1 || span < 1 || lead + span - 1 > horizon) throw DomainError("interval_quantile: interval outside the horizon");
    const std::vector<double>& loc = location.at(s);
    double total = 0.0;
    for (std::size_t t = origin + lead - 1; t < origin + lead - 1 + span; ++t) total += loc.at(t);
    if (kind == NoiseKind::Poisson) return poisson_quantile(total, u);
    const double r = rho.at(s).at(origin);
    const double n = static_cast<double>(span);
    return total + std::sqrt(n + n * (n - 1.0) * r) * std_normal_quantile(u);
}

double SyntheticSuite::param(const std::string& key) const {
    for (const auto& [k, v] : params) {
        if (k == key) return v;
    }
    throw FormatError("suite '" + name + "' has no parameter '" + key + "'");
}

// ---- generators -----------------------------------------------------------

SyntheticOutput gen_linear_gaussian(const LinearGaussianParams& p) {
    check_rho(p.rho, "gen_linear_gaussian: rho");
    SyntheticOutput out = gen_blocks({"lg", "linear-gaussian", p.n_series, p.horizon, p.seed, p.slope, p.blocks,
                                      false, p.rho, p.rho});
    out.suite.params = {{"n_series", static_cast<double>(p.n_series)},
                        {"horizon", static_cast<double>(p.horizon)},
                        {"seed", static_cast<double>(p.seed)},
                        {"rho", p.rho},
                        {"slope", p.slope},
                        {"blocks", static_cast<double>(p.blocks)}};
    return out;
}

SyntheticOutput gen_regime_copula(const RegimeCopulaParams& p) {
    check_rho(p.rho_on, "gen_regime_copula: rho_on");
    check_rho(p.rho_off, "gen_regime_copula: rho_off");
    SyntheticOutput out = gen_blocks({"rc", "regime-copula", p.n_series, p.horizon, p.seed, p.slope, p.blocks, true,
                                      p.rho_on, p.rho_off});
    out.suite.params = {{"n_series", static_cast<double>(p.n_series)},
                        {"horizon", static_cast<double>(p.horizon)},
                        {"seed", static_cast<double>(p.seed)},
                        {"rho_on", p.rho_on},
                        {"rho_off", p.rho_off},
                        {"slope", p.slope},
                        {"blocks", static_cast<double>(p.blocks)}};
    return out;
}

SyntheticOutput gen_seasonal_counts(const SeasonalCountsParams& p) {
    const std::size_t d = p.horizon;
    if (d == 0 || p.period == 0) throw DomainError("gen_seasonal_counts: horizon and period must be >= 1");
    if (p.length < 2 * d + 1) throw DomainError("gen_seasonal_counts: length must exceed 2 d");
    if (!(p.intensity_scale >= 0.0)) throw DomainError("gen_seasonal_counts: intensity_scale must be >= 0");
    const std::size_t cold_lo = 2 * d + 4;
    const std::size_t cold_hi = std::max(cold_lo, std::min(p.history, p.length) - 1);

    SyntheticOutput out;
    SeriesDataset& ds = out.dataset;
    ds.name = "seasonal-counts";
    ds.horizon = d;
    ds.history = p.history;
    ds.cut_stride = 4;
    ds.cut_offset = 0;
    ds.min_history = 1;
    ds.holdout = d;
    ds.nonnegative = true;
    ds.future_names = {"season_sin", "season_cos", "promo"};

    SyntheticSuite& su = out.suite;
    su.name = ds.name;
    su.kind = NoiseKind::Poisson;
    su.horizon = d;
    su.params = {{"n_series", static_cast<double>(p.n_series)},
                 {"horizon", static_cast<double>(d)},
                 {"seed", static_cast<double>(p.seed)},
                 {"period", static_cast<double>(p.period)},
                 {"length", static_cast<double>(p.length)},
                 {"promo_rate", p.promo_rate},
                 {"promo_lift", p.promo_lift},
                 {"cold_start_fraction", p.cold_start_fraction},
                 {"intensity_scale", p.intensity_scale}};

    const RngState root(p.seed, 3);
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t s = 0; s < p.n_series; ++s) {
        RngState rng = root.split(s);
        const double base = rng.uniform(p.base_lo, p.base_hi);
        const double amp = rng.uniform(p.amplitude_lo, p.amplitude_hi);
        const double phase = rng.uniform(0.0, static_cast<double>(p.period));
        const bool cold = rng.uniform() < p.cold_start_fraction;
        const std::size_t t_obs = cold ? cold_lo + rng.below(cold_hi - cold_lo + 1) : p.length;
        const std::size_t t_fut = t_obs + d;

        Series ser;
        ser.id = series_id("sc", p.seed, s);
        ser.y.resize(t_obs);
        ser.hist_cov = Tensor({t_obs, 0});
        ser.future_cov = Tensor({t_fut, 3});
        std::vector<double> loc(t_fut);
        for (std::size_t t = 0; t < t_fut; ++t) {
            const double angle = two_pi * (static_cast<double>(t) + phase) / static_cast<double>(p.period);
            const double promo = rng.uniform() < p.promo_rate ? 1.0 : 0.0;
            ser.future_cov(t, 0) = std::sin(angle);
            ser.future_cov(t, 1) = std::cos(angle);
            ser.future_cov(t, 2) = promo;
            loc[t] = p.intensity_scale * std::exp(base + amp * std::sin(angle) + p.promo_lift * promo);
            if (t < t_obs) ser.y[t] = poisson_quantile(loc[t], rng.uniform());
        }
        su.ids.push_back(ser.id);
        su.location.push_back(std::move(loc));
        su.rho.emplace_back(t_fut, 0.0);
        ds.series.push_back(std::move(ser));
    }
    return out;
}

}  // namespace gmq
