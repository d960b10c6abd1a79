#include "gmq/evaluation.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <tuple>

#include "gmq/error.hpp"
#include "gmq/quantile_net.hpp"

namespace gmq {

namespace {

int ladder_level(std::size_t n) {
    auto pow2 = [](std::size_t v) { return v != 0 && (v & (v - 1)) == 0; };
    if (pow2(n)) return 0;
    if (n % 3 == 0 && pow2(n / 3)) return 1;
    return 2;
}

void check_u_set(std::span<const double> u_set) {
    if (u_set.empty()) throw DomainError("empty quantile set");
    for (double u : u_set) {
        if (!(u > 0.0 && u < 1.0)) throw DomainError("quantile level outside (0,1)");
    }
}

}  // namespace

// ---- mesh -----------------------------------------------------------------

std::vector<Interval> all_intervals(std::size_t d) {
    std::vector<Interval> out;
    out.reserve(d * (d + 1) / 2);
    for (std::size_t s = 1; s <= d; ++s) {
        for (std::size_t l = 1; l + s - 1 <= d; ++l) out.push_back({l, s});
    }
    return out;
}

bool MeshSpec::contains(Interval iv) const { return std::find(points.begin(), points.end(), iv) != points.end(); }

void MeshSpec::validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Interval p = points[i];
        if (p.l < 1 || p.s < 1 || p.l + p.s - 1 > horizon) throw DomainError("mesh point out of range");
        for (std::size_t j = 0; j < i; ++j) {
            if (points[j] == p) throw DomainError("duplicate mesh point");
        }
    }
    for (std::size_t l = 1; l <= horizon; ++l) {
        if (!contains({l, 1})) throw DomainError("mesh misses marginal point (" + std::to_string(l) + ",1)");
    }
    if (horizon * (horizon + 1) / 2 > points.size() && points.size() < 3) {
        throw DomainError("mesh needs at least three points to interpolate");
    }
}

MeshSpec mesh_enumerate(std::size_t d, std::size_t budget) {
    if (d == 0) throw DomainError("mesh_enumerate: d must be >= 1");
    if (budget < d) {
        throw InsufficientDataError("mesh_enumerate: budget " + std::to_string(budget) + " cannot cover " +
                                    std::to_string(d) + " marginal points");
    }
    MeshSpec mesh;
    mesh.horizon = d;
    const std::vector<Interval> all = all_intervals(d);
    if (budget >= all.size()) {
        mesh.points = all;
        return mesh;
    }
    for (std::size_t l = 1; l <= d; ++l) mesh.points.push_back({l, 1});
    if (mesh.points.size() < budget && d > 1) mesh.points.push_back({1, d});
    std::vector<Interval> rest;
    for (const Interval& iv : all) {
        if (iv.s > 1 && !(iv.l == 1 && iv.s == d)) rest.push_back(iv);
    }
    std::stable_sort(rest.begin(), rest.end(), [](const Interval& a, const Interval& b) {
        return std::make_tuple(ladder_level(a.l) + ladder_level(a.s), a.s, a.l) <
               std::make_tuple(ladder_level(b.l) + ladder_level(b.s), b.s, b.l);
    });
    for (const Interval& iv : rest) {
        if (mesh.points.size() >= budget) break;
        mesh.points.push_back(iv);
    }
    return mesh;
}

// ---- tables ---------------------------------------------------------------

std::size_t QuantileForecastTable::index_of(Interval iv) const {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == iv) return i;
    }
    throw AlignmentError("interval (" + std::to_string(iv.l) + "," + std::to_string(iv.s) + ") not in table");
}

double empirical_quantile(std::span<const double> sorted, double u) {
    if (sorted.empty()) throw InsufficientDataError("empirical_quantile: no samples");
    if (!(u >= 0.0 && u <= 1.0)) throw DomainError("empirical_quantile: u outside [0,1]");
    const double pos = static_cast<double>(sorted.size() - 1) * u;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

QuantileForecastTable interval_sum_quantiles(const ForecastPaths& paths, std::span<const Interval> cells,
                                             std::span<const double> u_set, std::size_t min_paths) {
    check_u_set(u_set);
    const std::size_t k = paths.paths();
    const std::size_t d = paths.horizon();
    if (k < min_paths || k == 0) {
        throw InsufficientDataError("interval_sum_quantiles: " + std::to_string(k) + " paths, at least " +
                                    std::to_string(std::max<std::size_t>(min_paths, 1)) + " required");
    }
    QuantileForecastTable t;
    t.cells.assign(cells.begin(), cells.end());
    t.u_set.assign(u_set.begin(), u_set.end());
    t.values = Tensor({cells.size(), u_set.size()});
    std::vector<double> sums(k);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const Interval iv = cells[c];
        if (iv.l < 1 || iv.s < 1 || iv.l + iv.s - 1 > d) throw AlignmentError("interval outside the path horizon");
        for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t i = iv.l - 1; i < iv.l - 1 + iv.s; ++i) s += paths.samples(p, i);
            sums[p] = s;
        }
        std::sort(sums.begin(), sums.end());
        for (std::size_t j = 0; j < u_set.size(); ++j) t.values(c, j) = empirical_quantile(sums, u_set[j]);
    }
    return t;
}

QuantileForecastTable interval_sum_quantiles(const ForecastPaths& paths, const MeshSpec& mesh,
                                             std::span<const double> u_set, std::size_t min_paths) {
    if (mesh.horizon != paths.horizon()) throw AlignmentError("mesh horizon differs from path horizon");
    return interval_sum_quantiles(paths, mesh.points, u_set, min_paths);
}

QuantileForecastTable marginal_table(std::span<const double> row, std::size_t d, std::span<const double> u_set) {
    const std::size_t nu = u_set.size();
    if (row.size() != d * nu) throw ShapeError("marginal_table: row must hold d * U values");
    QuantileForecastTable t;
    for (std::size_t l = 1; l <= d; ++l) t.cells.push_back({l, 1});
    t.u_set.assign(u_set.begin(), u_set.end());
    t.values = Tensor({d, nu}, std::vector<double>(row.begin(), row.end()));
    return t;
}

double interval_total(std::span<const double> truth, Interval iv) {
    if (iv.l < 1 || iv.s < 1 || iv.l + iv.s - 1 > truth.size()) throw AlignmentError("truth does not cover interval");
    double s = 0.0;
    for (std::size_t i = iv.l - 1; i < iv.l - 1 + iv.s; ++i) s += truth[i];
    return s;
}

// ---- crossings ------------------------------------------------------------

CrossingCounts& CrossingCounts::operator+=(const CrossingCounts& o) {
    q_cells += o.q_cells;
    q_crossed += o.q_crossed;
    i_pairs += o.i_pairs;
    i_crossed += o.i_crossed;
    return *this;
}

CrossingCounts crossing_counts(const QuantileForecastTable& table, bool nonnegative) {
    for (std::size_t j = 1; j < table.u_set.size(); ++j) {
        if (!(table.u_set[j - 1] < table.u_set[j])) throw DomainError("crossing_counts: u_set must be ascending");
    }
    CrossingCounts c;
    const std::size_t nu = table.u_set.size();
    for (std::size_t i = 0; i < table.cells.size(); ++i) {
        ++c.q_cells;
        for (std::size_t j = 1; j < nu; ++j) {
            if (table.values(i, j - 1) > table.values(i, j)) {
                ++c.q_crossed;
                break;
            }
        }
    }
    if (!nonnegative) return c;
    for (std::size_t a = 0; a < table.cells.size(); ++a) {
        for (std::size_t b = 0; b < table.cells.size(); ++b) {
            const Interval outer = table.cells[a];
            const Interval inner = table.cells[b];
            if (outer.l != inner.l || inner.s >= outer.s) continue;
            ++c.i_pairs;
            for (std::size_t j = 0; j < nu; ++j) {
                if (table.values(a, j) < table.values(b, j)) {
                    ++c.i_crossed;
                    break;
                }
            }
        }
    }
    return c;
}

CrossingRates crossing_rates(const CrossingCounts& c, bool nonnegative) {
    CrossingRates r;
    r.q_x = c.q_cells == 0 ? 0.0 : static_cast<double>(c.q_crossed) / static_cast<double>(c.q_cells);
    if (nonnegative) r.i_x = c.i_pairs == 0 ? 0.0 : static_cast<double>(c.i_crossed) / static_cast<double>(c.i_pairs);
    return r;
}

CrossingRates crossing_rates(const QuantileForecastTable& table, bool nonnegative) {
    return crossing_rates(crossing_counts(table, nonnegative), nonnegative);
}

// ---- quantile loss report -------------------------------------------------

std::vector<QlCell> interval_ql(const QuantileForecastTable& table, std::span<const double> truth) {
    std::vector<QlCell> out;
    out.reserve(table.cells.size() * table.u_set.size());
    for (std::size_t i = 0; i < table.cells.size(); ++i) {
        const double y = interval_total(truth, table.cells[i]);
        for (std::size_t j = 0; j < table.u_set.size(); ++j) {
            const double f = table.values(i, j);
            out.push_back({table.cells[i], table.u_set[j], f, y, quantile_loss(table.u_set[j], y, f)});
        }
    }
    return out;
}

std::vector<ReportRow> interval_ql_report(const ModelTables& m, const std::vector<ReportRow>* baseline) {
    if (m.tables.size() != m.truths.size()) throw AlignmentError("interval_ql_report: one truth per table required");
    if (m.tables.empty()) throw InsufficientDataError("interval_ql_report: no forecasts");
    const std::vector<double>& u_set = m.tables.front().u_set;
    const std::size_t nu = u_set.size();
    const char* groups[] = {"(l,1)", "(1,s)", "all"};
    std::vector<double> sum(3 * nu, 0.0);
    std::vector<std::size_t> count(3 * nu, 0);
    CrossingCounts cross;
    for (std::size_t e = 0; e < m.tables.size(); ++e) {
        const QuantileForecastTable& t = m.tables[e];
        if (t.u_set != u_set) throw AlignmentError("interval_ql_report: quantile sets differ between forecasts");
        cross += crossing_counts(t, m.nonnegative);
        for (const QlCell& c : interval_ql(t, m.truths[e])) {
            const std::size_t j = static_cast<std::size_t>(std::find(u_set.begin(), u_set.end(), c.u) - u_set.begin());
            const bool member[] = {c.cell.s == 1, c.cell.l == 1, true};
            for (std::size_t g = 0; g < 3; ++g) {
                if (!member[g]) continue;
                sum[g * nu + j] += c.ql;
                ++count[g * nu + j];
            }
        }
    }
    const CrossingRates rates = crossing_rates(cross, m.nonnegative);
    std::vector<ReportRow> rows;
    for (std::size_t g = 0; g < 3; ++g) {
        for (std::size_t j = 0; j < nu; ++j) {
            if (count[g * nu + j] == 0) continue;
            ReportRow r;
            r.model = m.model;
            r.group = groups[g];
            r.u = u_set[j];
            r.mean_ql = sum[g * nu + j] / static_cast<double>(count[g * nu + j]);
            r.q_x = rates.q_x;
            r.i_x = rates.i_x;
            if (baseline != nullptr) {
                for (const ReportRow& b : *baseline) {
                    if (b.group == r.group && std::fabs(b.u - r.u) < 1e-12 && b.mean_ql > 0.0) r.scaled_ql = r.mean_ql / b.mean_ql;
                }
            }
            rows.push_back(r);
        }
    }
    return rows;
}

std::string report_csv(std::span<const ReportRow> rows) {
    std::ostringstream os;
    os << "model,group,u,mean_QL,scaled_QL,q_x,i_x\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return std::string(buf);
    };
    for (const ReportRow& r : rows) {
        os << r.model << ',' << '"' << r.group << '"' << ',' << num(r.u) << ',' << num(r.mean_ql) << ','
           << (r.scaled_ql ? num(*r.scaled_ql) : "") << ',' << num(r.q_x) << ',' << (r.i_x ? num(*r.i_x) : "") << '\n';
    }
    return os.str();
}

// ---- incomplete gamma and shifted Gamma -----------------------------------

double regularized_gamma_p(double a, double x) {
    if (!(a > 0.0) || !std::isfinite(a)) throw DomainError("regularized_gamma_p: a must be positive");
    if (!(x >= 0.0)) throw DomainError("regularized_gamma_p: x must be >= 0");
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    const double log_prefix = a * std::log(x) - x - std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a, term = 1.0 / a, sum = term;
        for (int n = 0; n < 10000; ++n) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::fabs(term) < std::fabs(sum) * 1e-17) break;
        }
        return std::min(1.0, sum * std::exp(log_prefix));
    }
    // Lentz continued fraction for Q(a, x).
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, dd = 1.0 / b, h = dd;
    for (int i = 1; i < 10000; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        dd = an * dd + b;
        if (std::fabs(dd) < tiny) dd = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        dd = 1.0 / dd;
        const double delta = dd * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-17) break;
    }
    return std::max(0.0, 1.0 - std::exp(log_prefix) * h);
}

double gamma_quantile(double k, double theta, double u) {
    if (!(k > 0.0) || !(theta > 0.0) || !std::isfinite(k) || !std::isfinite(theta)) {
        throw DomainError("gamma_quantile: k and theta must be positive and finite");
    }
    if (!(u > 0.0 && u < 1.0)) throw DomainError("gamma_quantile: u outside (0,1)");
    double hi = std::max(1.0, k);
    while (regularized_gamma_p(k, hi) < u) hi *= 2.0;
    // Leading series term x^k / Gamma(k+1) bounds P from above, so this lies below the quantile.
    const double log_guess = (std::log(u) + std::lgamma(k + 1.0)) / k - 1.0;
    double lo = std::min(hi / 2.0, std::exp(std::max(log_guess, std::log(DBL_MIN) + 1.0)));
    while (lo > DBL_MIN && regularized_gamma_p(k, lo) >= u) lo /= 2.0;
    if (!(lo > DBL_MIN)) return 0.0;
    // Geometric bisection while the bracket is wide, then arithmetic.
    for (int it = 0; it < 400; ++it) {
        const double mid = hi / lo > 4.0 ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (regularized_gamma_p(k, mid) < u) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-15 * hi) break;
    }
    return theta * 0.5 * (lo + hi);
}

double shifted_gamma_quantile(const ShiftedGamma& g, double u) {
    return std::max(gamma_quantile(g.k, g.theta, u) - 1.0, 0.0);
}

ShiftedGamma fit_shifted_gamma(double p50, double p90, double k_at_zero) {
    if (!std::isfinite(p50) || !std::isfinite(p90) || p50 < 0.0) {
        throw DomainError("fit_shifted_gamma: quantiles must be finite with p50 >= 0");
    }
    if (!(p90 > p50)) throw DomainError("fit_shifted_gamma: infeasible, p90 must exceed p50");
    if (p50 == 0.0) {
        const double k = k_at_zero;
        return {k, (p90 + 1.0) / gamma_quantile(k, 1.0, 0.9)};
    }
    const double a = p50 + 1.0;
    const double target = (p90 + 1.0) / a;
    auto ratio = [](double k) { return gamma_quantile(k, 1.0, 0.9) / gamma_quantile(k, 1.0, 0.5); };
    double lo = std::log(1e-3), hi = std::log(1e3);
    // ratio is decreasing in k.
    if (!(ratio(std::exp(lo)) >= target) || !(ratio(std::exp(hi)) <= target)) {
        throw ConvergenceError("fit_shifted_gamma: no shape in [1e-3, 1e3] matches p90/p50");
    }
    for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (ratio(std::exp(mid)) > target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const double k = std::exp(0.5 * (lo + hi));
    return {k, a / gamma_quantile(k, 1.0, 0.5)};
}

QuantileForecastTable mesh_gamma_table(const MeshSpec& mesh, const Tensor& p50_p90, std::span<const double> u_set) {
    check_u_set(u_set);
    if (p50_p90.rank() != 2 || p50_p90.rows() != mesh.points.size() || p50_p90.cols() != 2) {
        throw ShapeError("mesh_gamma_table: expected [cells, 2] quantiles");
    }
    QuantileForecastTable t;
    t.cells = mesh.points;
    t.u_set.assign(u_set.begin(), u_set.end());
    t.values = Tensor({t.cells.size(), u_set.size()});
    for (std::size_t i = 0; i < t.cells.size(); ++i) {
        const double p50 = std::max(0.0, p50_p90(i, 0));
        // Sampled quantiles can tie; keep the fit feasible.
        const double p90 = std::max(p50_p90(i, 1), p50 + std::max(1e-3, 1e-3 * p50));
        const ShiftedGamma g = fit_shifted_gamma(p50, p90);
        for (std::size_t j = 0; j < u_set.size(); ++j) t.values(i, j) = shifted_gamma_quantile(g, u_set[j]);
    }
    return t;
}

// ---- interpolation --------------------------------------------------------

Interpolated mesh_interpolate(const QuantileForecastTable& mesh_table, Interval query) {
    const std::size_t n = mesh_table.cells.size();
    const std::size_t nu = mesh_table.u_set.size();
    Interpolated out;
    out.values.assign(nu, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (mesh_table.cells[i] == query) {
            for (std::size_t j = 0; j < nu; ++j) out.values[j] = mesh_table.values(i, j);
            return out;
        }
    }
    if (n == 0) throw InsufficientDataError("mesh_interpolate: empty mesh");
    const double ql = static_cast<double>(query.l), qs = static_cast<double>(query.s);
    std::vector<std::size_t> order(n);
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
        const double dl = static_cast<double>(mesh_table.cells[i].l) - ql;
        const double ds = static_cast<double>(mesh_table.cells[i].s) - qs;
        dist[i] = std::sqrt(dl * dl + ds * ds);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::make_tuple(dist[a], mesh_table.cells[a].s, mesh_table.cells[a].l) <
               std::make_tuple(dist[b], mesh_table.cells[b].s, mesh_table.cells[b].l);
    });
    const std::size_t m = std::min<std::size_t>(n, 12);

    struct Choice {
        std::size_t a, b, c;
        double w[3];
    };
    std::optional<Choice> inside, nearest;
    double inside_cost = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            for (std::size_t k = j + 1; k < m; ++k) {
                const Interval p0 = mesh_table.cells[order[i]];
                const Interval p1 = mesh_table.cells[order[j]];
                const Interval p2 = mesh_table.cells[order[k]];
                const double x0 = static_cast<double>(p0.l), y0 = static_cast<double>(p0.s);
                const double x1 = static_cast<double>(p1.l), y1 = static_cast<double>(p1.s);
                const double x2 = static_cast<double>(p2.l), y2 = static_cast<double>(p2.s);
                const double det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2);
                if (std::fabs(det) < 1e-12) continue;
                Choice ch{order[i], order[j], order[k], {}};
                ch.w[0] = ((y1 - y2) * (ql - x2) + (x2 - x1) * (qs - y2)) / det;
                ch.w[1] = ((y2 - y0) * (ql - x2) + (x0 - x2) * (qs - y2)) / det;
                ch.w[2] = 1.0 - ch.w[0] - ch.w[1];
                if (!nearest) nearest = ch;
                const double eps = -1e-12;
                if (ch.w[0] >= eps && ch.w[1] >= eps && ch.w[2] >= eps) {
                    const double cost = dist[order[i]] + dist[order[j]] + dist[order[k]];
                    if (cost < inside_cost) {
                        inside_cost = cost;
                        inside = ch;
                    }
                }
            }
        }
    }
    const std::optional<Choice>& pick = inside ? inside : nearest;
    if (pick) {
        for (std::size_t u = 0; u < nu; ++u) {
            out.values[u] = pick->w[0] * mesh_table.values(pick->a, u) + pick->w[1] * mesh_table.values(pick->b, u) +
                            pick->w[2] * mesh_table.values(pick->c, u);
        }
        return out;
    }
    out.idw_fallback = true;
    const std::size_t t = std::min<std::size_t>(3, n);
    double wsum = 0.0;
    for (std::size_t r = 0; r < t; ++r) wsum += 1.0 / dist[order[r]];
    for (std::size_t r = 0; r < t; ++r) {
        const double w = (1.0 / dist[order[r]]) / wsum;
        for (std::size_t u = 0; u < nu; ++u) out.values[u] += w * mesh_table.values(order[r], u);
    }
    return out;
}

QuantileForecastTable interpolate_table(const QuantileForecastTable& mesh_table, std::span<const Interval> cells,
                                        std::size_t* idw_count) {
    QuantileForecastTable t;
    t.cells.assign(cells.begin(), cells.end());
    t.u_set = mesh_table.u_set;
    t.values = Tensor({cells.size(), t.u_set.size()});
    std::size_t idw = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const Interpolated v = mesh_interpolate(mesh_table, cells[i]);
        if (v.idw_fallback) ++idw;
        for (std::size_t j = 0; j < t.u_set.size(); ++j) t.values(i, j) = v.values[j];
    }
    if (idw_count != nullptr) *idw_count = idw;
    return t;
}

}  // namespace gmq
