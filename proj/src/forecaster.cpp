#include "gmq/forecaster.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <thread>

#include "gmq/error.hpp"
#include "gmq/linalg.hpp"
#include "gmq/normal.hpp"
#include "gmq/optim.hpp"

namespace gmq {

namespace {

constexpr std::size_t kPathChunk = 256;

void check_train_config(const TrainConfig& c, const char* phase) {
    if (!(c.learning_rate > 0.0) || c.epochs <= 0 || c.batch_size == 0 || !(c.momentum >= 0.0 && c.momentum < 1.0)) {
        throw DomainError(std::string(phase) + ": learning rate, epochs and batch size must be positive, momentum in [0,1)");
    }
}

void shuffle(std::vector<std::size_t>& order, RngState& rng) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
}

double finish_value(double v, const Standardization& st, bool nonnegative) {
    const double y = st.invert(v);
    return nonnegative ? std::max(y, 0.0) : y;
}

}  // namespace

// ---- configuration --------------------------------------------------------

ModelConfig ModelConfig::for_dataset(const SeriesDataset& ds) {
    ModelConfig c;
    c.horizon = ds.horizon;
    c.history = ds.history;
    c.n_hist = ds.n_hist();
    c.n_future = ds.n_future();
    c.n_static = ds.n_static();
    c.nonnegative = ds.nonnegative;
    return c;
}

void ModelConfig::validate() const {
    if (horizon == 0) throw DomainError("model: horizon must be >= 1");
    if (horizon > max_horizon) {
        throw DomainError("model: horizon " + std::to_string(horizon) + " exceeds max_horizon " +
                          std::to_string(max_horizon));
    }
    if (encoder_hidden == 0 || embedding == 0 || copula_hidden == 0) throw DomainError("model: layer widths must be >= 1");
    if (qnet_hidden.empty()) throw DomainError("model: quantile net needs at least one hidden layer");
    for (std::size_t w : qnet_hidden) {
        if (w == 0) throw DomainError("model: layer widths must be >= 1");
    }
}

// ---- model ----------------------------------------------------------------

GmqModel::GmqModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    RngState rng(seed, 100);
    RngState enc_rng = rng.split(0);
    RngState emb_rng = rng.split(1);
    RngState q_rng = rng.split(2);
    RngState head_rng = rng.split(3);
    const std::size_t in = encoder_input_width(cfg_.history, cfg_.n_hist, cfg_.n_static);
    encoder_ = nn::Mlp("encoder", {in, cfg_.encoder_hidden, cfg_.embedding}, cfg_.activation, cfg_.activation, enc_rng);
    Tensor emb({cfg_.horizon, cfg_.horizon_embedding});
    for (double& v : emb.values()) v = emb_rng.uniform(-0.5, 0.5);
    horizon_emb_ = ad::Parameter("horizon_embedding", std::move(emb));
    qnet_ = QuantileNet(context_dim(), cfg_.qnet_hidden, cfg_.activation, q_rng);
    head_ = CopulaHead(cfg_.horizon * context_dim(), cfg_.horizon, cfg_.copula_hidden, head_rng);
}

std::size_t GmqModel::context_dim() const noexcept {
    return cfg_.embedding + cfg_.horizon_embedding + cfg_.n_future;
}

Tensor GmqModel::contexts(const CutFeatures& f) const {
    const std::size_t n = f.encoder_input.rows();
    const std::size_t d = cfg_.horizon;
    const std::size_t m = cfg_.embedding;
    const std::size_t p = cfg_.horizon_embedding;
    const std::size_t nf = cfg_.n_future;
    const std::size_t c = context_dim();
    if (f.future.size() != n * d * nf) throw ShapeError("contexts: future covariates do not match the model");
    Tensor out({n * d, c});
    if (n == 0) return out;
    const Tensor enc = encoder_.infer(f.encoder_input);
    for (std::size_t e = 0; e < n; ++e) {
        for (std::size_t i = 0; i < d; ++i) {
            double* row = out.data() + (e * d + i) * c;
            std::copy_n(enc.data() + e * m, m, row);
            std::copy_n(horizon_emb_.value.data() + i * p, p, row + m);
            std::copy_n(f.future.data() + e * d * nf + i * nf, nf, row + m + p);
        }
    }
    return out;
}

ad::Var GmqModel::contexts_graph(ad::Tape& tape, const CutFeatures& f, std::span<const std::size_t> rows) {
    const std::size_t d = cfg_.horizon;
    const std::size_t nf = cfg_.n_future;
    const std::size_t w = f.encoder_input.cols();
    const std::size_t e = rows.size();
    Tensor x({e, w});
    Tensor fut({e * d, nf});
    std::vector<std::size_t> idx(e * d);
    for (std::size_t r = 0; r < e; ++r) {
        std::copy_n(f.encoder_input.data() + rows[r] * w, w, x.data() + r * w);
        std::copy_n(f.future.data() + rows[r] * d * nf, d * nf, fut.data() + r * d * nf);
        for (std::size_t i = 0; i < d; ++i) idx[r * d + i] = i;
    }
    const ad::Var enc = ad::repeat_rows(encoder_.forward(tape, tape.constant(std::move(x))), d);
    const ad::Var hor = ad::gather_rows(tape.param(horizon_emb_), std::move(idx));
    if (nf == 0) {
        const ad::Var parts[] = {enc, hor};
        return ad::concat_cols(parts);
    }
    const ad::Var parts[] = {enc, hor, tape.constant(std::move(fut))};
    return ad::concat_cols(parts);
}

std::vector<CopulaFactor> GmqModel::factors(const Tensor& contexts) const {
    const std::size_t d = cfg_.horizon;
    const std::size_t n = contexts.rows() / d;
    if (!has_copula_) return std::vector<CopulaFactor>(n, CopulaFactor::identity(d));
    return head_.factors(contexts.reshaped({n, d * context_dim()}));
}

std::vector<Standardization> GmqModel::standardization_for(const SeriesDataset& ds) const {
    std::vector<Standardization> out;
    out.reserve(ds.series.size());
    for (std::size_t s = 0; s < ds.series.size(); ++s) {
        const auto it = std::find(ids_.begin(), ids_.end(), ds.series[s].id);
        out.push_back(it != ids_.end() ? stats_[static_cast<std::size_t>(it - ids_.begin())]
                                       : series_standardization(ds, s));
    }
    return out;
}

void GmqModel::remember_standardization(const SeriesDataset& ds) {
    ids_.clear();
    stats_.clear();
    for (std::size_t s = 0; s < ds.series.size(); ++s) {
        ids_.push_back(ds.series[s].id);
        stats_.push_back(series_standardization(ds, s));
    }
}

void GmqModel::set_known(std::vector<std::string> ids, std::vector<Standardization> stats) {
    if (ids.size() != stats.size()) throw ShapeError("set_known: ids and statistics differ in length");
    ids_ = std::move(ids);
    stats_ = std::move(stats);
}

void GmqModel::collect_encoder(std::vector<ad::Parameter*>& out) {
    encoder_.collect(out);
    out.push_back(&horizon_emb_);
}

std::vector<ad::Parameter*> GmqModel::parameters() {
    std::vector<ad::Parameter*> out;
    collect_encoder(out);
    qnet_.collect_forward(out);
    qnet_.collect_inverse(out);
    head_.collect(out);
    return out;
}

std::vector<const ad::Parameter*> GmqModel::parameters() const {
    std::vector<const ad::Parameter*> out;
    for (ad::Parameter* p : const_cast<GmqModel*>(this)->parameters()) out.push_back(p);
    return out;
}

CutFeatures model_features(const GmqModel& model, const SeriesDataset& ds, std::span<const Cut> cuts) {
    const ModelConfig& c = model.config();
    if (ds.horizon != c.horizon || ds.history != c.history || ds.n_hist() != c.n_hist ||
        ds.n_future() != c.n_future || ds.n_static() != c.n_static) {
        throw AlignmentError("dataset '" + ds.name + "' schema (d=" + std::to_string(ds.horizon) +
                             ", h=" + std::to_string(ds.history) + ") does not match the model (d=" +
                             std::to_string(c.horizon) + ", h=" + std::to_string(c.history) + ")");
    }
    const std::vector<Standardization> st = model.standardization_for(ds);
    return build_features(ds, cuts, st);
}

Tensor encode_contexts(const GmqModel& model, const SeriesDataset& ds, Cut cut) {
    const Cut cuts[] = {cut};
    return model.contexts(model_features(model, ds, cuts));
}

// ---- training -------------------------------------------------------------

namespace {

std::vector<double> flat_targets(const CutFeatures& f, std::span<const std::size_t> rows, std::size_t d) {
    std::vector<double> y(rows.size() * d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(f.targets.data() + rows[r] * d, d, y.data() + r * d);
    }
    return y;
}

std::vector<double> train_phase2_joint(GmqModel& model, const CutFeatures& f, const GmqTrainConfig& cfg) {
    const std::size_t n = f.targets.rows();
    const std::size_t d = model.horizon();
    const std::size_t c = model.context_dim();
    const TrainConfig& tc = cfg.phase2;
    std::vector<ad::Parameter*> params;
    model.collect_encoder(params);
    model.qnet().collect_forward(params);
    model.qnet().collect_inverse(params);
    model.head().collect(params);
    const std::size_t batches = (n + tc.batch_size - 1) / tc.batch_size;
    SgdMomentum opt(tc.learning_rate, tc.momentum, batches * static_cast<std::size_t>(tc.epochs), tc.clip_norm);
    RngState rng(tc.seed, 3);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> history;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        RngState erng = rng.split(static_cast<std::uint64_t>(epoch));
        shuffle(order, erng);
        double total = 0.0;
        for (std::size_t b0 = 0; b0 < n; b0 += tc.batch_size) {
            const std::size_t m = std::min(tc.batch_size, n - b0);
            const std::span<const std::size_t> rows(order.data() + b0, m);
            const Tensor y({m * d}, flat_targets(f, rows, d));
            std::vector<QuantileIndexDraw> draws(m * d);
            for (auto& dr : draws) dr = QuantileIndexDraw::sample(erng);
            ad::Tape tape;
            const ad::Var ctx = model.contexts_graph(tape, f, rows);
            const MarginalLoss marg = build_marginal_loss(tape, model.qnet(), ctx, y, draws, tc.inverse_weight);
            Tensor ycol = y.reshaped({m * d, 1});
            const ad::Var zt = ad::detach(ad::clamp(
                model.qnet().inverse_graph(tape, tape.constant(std::move(ycol)), ad::detach(ctx)), -kScoreClamp,
                kScoreClamp));
            const ad::Var lower = model.head().lower_graph(tape, ad::reshape(ctx, {m, d * c}));
            const ad::Var l3 = copula_nll_graph(lower, zt.value().reshaped({m, d}));
            const double v = l3.value()[0];
            if (!std::isfinite(v) || !std::isfinite(marg.total.value()[0])) throw TrainingDivergedError("copula", epoch);
            tape.backward(ad::add(l3, marg.total));
            opt.step(params);
            total += v * static_cast<double>(m);
        }
        history.push_back(total / static_cast<double>(n));
    }
    return history;
}

}  // namespace

GmqHistory train_gmq(GmqModel& model, const SeriesDataset& ds, const GmqTrainConfig& cfg) {
    ds.validate();
    check_train_config(cfg.phase1, "phase 1");
    const std::vector<Cut> cuts = training_cuts(ds);
    if (cuts.empty()) throw InsufficientDataError("train_gmq: dataset '" + ds.name + "' has no training cuts");
    model.remember_standardization(ds);
    const CutFeatures f = model_features(model, ds, cuts);
    f.targets.require_finite("training targets");

    const std::size_t n = cuts.size();
    const std::size_t d = model.horizon();
    const TrainConfig& tc = cfg.phase1;
    std::vector<ad::Parameter*> params;
    model.collect_encoder(params);
    model.qnet().collect_forward(params);
    model.qnet().collect_inverse(params);
    const std::size_t batches = (n + tc.batch_size - 1) / tc.batch_size;
    SgdMomentum opt(tc.learning_rate, tc.momentum, batches * static_cast<std::size_t>(tc.epochs), tc.clip_norm);

    RngState rng(tc.seed, 0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    GmqHistory hist;
    std::vector<QuantileIndexDraw> draws;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        RngState erng = rng.split(static_cast<std::uint64_t>(epoch));
        shuffle(order, erng);
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t b0 = 0; b0 < n; b0 += tc.batch_size) {
            const std::size_t m = std::min(tc.batch_size, n - b0);
            const std::span<const std::size_t> rows(order.data() + b0, m);
            const Tensor y({m * d}, flat_targets(f, rows, d));
            draws.resize(m * d);
            for (auto& dr : draws) dr = QuantileIndexDraw::sample(erng);
            ad::Tape tape;
            const ad::Var ctx = model.contexts_graph(tape, f, rows);
            const MarginalLoss loss = build_marginal_loss(tape, model.qnet(), ctx, y, draws, tc.inverse_weight);
            const double l1 = loss.l1.value()[0];
            const double l2 = loss.l2.value()[0];
            if (!std::isfinite(l1) || !std::isfinite(l2)) throw TrainingDivergedError("marginal", epoch);
            tape.backward(loss.total);
            opt.step(params);
            s1 += l1 * static_cast<double>(m);
            s2 += l2 * static_cast<double>(m);
        }
        hist.losses.l1.push_back(s1 / static_cast<double>(n));
        hist.losses.l2.push_back(s2 / static_cast<double>(n));
    }
    model.set_phase1_done(true);
    model.set_has_copula(false);
    if (cfg.copula) hist.losses.l3 = train_gmq_copula(model, ds, cfg);
    return hist;
}

std::vector<double> train_gmq_copula(GmqModel& model, const SeriesDataset& ds, const GmqTrainConfig& cfg) {
    if (!model.phase1_done()) throw Error("train_gmq_copula: phase 1 has not been run");
    check_train_config(cfg.phase2, "phase 2");
    const std::vector<Cut> cuts = training_cuts(ds);
    if (cuts.empty()) throw InsufficientDataError("train_gmq_copula: no training cuts");
    const CutFeatures f = model_features(model, ds, cuts);
    std::vector<double> hist;
    if (cfg.freeze_phase1) {
        hist = train_copula(model.head(), model.qnet(), model.contexts(f), f.targets, cfg.phase2);
    } else {
        hist = train_phase2_joint(model, f, cfg);
    }
    model.set_has_copula(true);
    return hist;
}

// ---- simulation -----------------------------------------------------------

std::vector<ForecastPaths> simulate_paths(const GmqModel& model, const SeriesDataset& ds, std::span<const Cut> cuts,
                                          std::size_t paths, std::uint64_t seed, std::size_t workers) {
    if (paths == 0) throw DomainError("simulate_paths: K must be >= 1");
    const std::size_t d = model.horizon();
    const std::size_t c = model.context_dim();
    const CutFeatures f = model_features(model, ds, cuts);
    const Tensor ctx = model.contexts(f);
    const std::vector<CopulaFactor> lf = model.factors(ctx);
    const bool nonneg = model.config().nonnegative || ds.nonnegative;

    std::vector<ForecastPaths> out(cuts.size());
    struct Task {
        std::size_t cut;
        std::size_t begin;
    };
    std::vector<Task> tasks;
    for (std::size_t n = 0; n < cuts.size(); ++n) {
        out[n].series_id = ds.series[cuts[n].series].id;
        out[n].origin = cuts[n].origin;
        out[n].seed = seed;
        out[n].samples = Tensor({paths, d});
        out[n].latents = Tensor({paths, d});
        for (std::size_t b = 0; b < paths; b += kPathChunk) tasks.push_back({n, b});
    }

    auto run = [&](const Task& t) {
        const std::size_t n = t.cut;
        const std::size_t k = std::min(kPathChunk, paths - t.begin);
        const RngState base(seed, n);
        Tensor tiled({k * d, c});
        std::vector<double> zs(k * d);
        for (std::size_t p = 0; p < k; ++p) {
            RngState prng = base.split(t.begin + p);
            double* z = out[n].latents.data() + (t.begin + p) * d;
            for (std::size_t i = 0; i < d; ++i) z[i] = prng.normal();
            tri::mul_lower(d, lf[n].lower().span(), {z, d}, {zs.data() + p * d, d});
            std::copy_n(ctx.data() + n * d * c, d * c, tiled.data() + p * d * c);
        }
        const Tensor y = model.qnet().forward_batch(zs, tiled);
        const Standardization& st = f.standardization[n];
        for (std::size_t r = 0; r < k * d; ++r) out[n].samples[t.begin * d + r] = finish_value(y[r], st, nonneg);
    };

    const std::size_t w = std::max<std::size_t>(1, std::min(workers, tasks.size()));
    if (w == 1) {
        for (const Task& t : tasks) run(t);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t id = 0; id < w; ++id) {
            pool.emplace_back([&, id] {
                for (std::size_t i = id; i < tasks.size(); i += w) run(tasks[i]);
            });
        }
        for (auto& th : pool) th.join();
    }
    for (const auto& p : out) p.samples.require_finite("simulated paths");
    return out;
}

ForecastPaths simulate_paths(const GmqModel& model, const SeriesDataset& ds, Cut cut, std::size_t paths,
                             std::uint64_t seed, std::size_t workers) {
    const Cut cuts[] = {cut};
    return std::move(simulate_paths(model, ds, cuts, paths, seed, workers).front());
}

Tensor direct_quantiles(const GmqModel& model, const SeriesDataset& ds, std::span<const Cut> cuts,
                        std::span<const double> u_set) {
    const std::size_t d = model.horizon();
    const std::size_t c = model.context_dim();
    const std::size_t nu = u_set.size();
    std::vector<double> zu(nu);
    for (std::size_t j = 0; j < nu; ++j) zu[j] = std_normal_quantile(u_set[j]);
    const CutFeatures f = model_features(model, ds, cuts);
    const Tensor ctx = model.contexts(f);
    const std::size_t n = cuts.size();
    Tensor tiled({n * d * nu, c});
    std::vector<double> z(n * d * nu);
    for (std::size_t r = 0; r < n * d; ++r) {
        for (std::size_t j = 0; j < nu; ++j) {
            z[r * nu + j] = zu[j];
            std::copy_n(ctx.data() + r * c, c, tiled.data() + (r * nu + j) * c);
        }
    }
    const Tensor y = model.qnet().forward_batch(z, tiled);
    const bool nonneg = model.config().nonnegative || ds.nonnegative;
    Tensor out({n, d * nu});
    for (std::size_t e = 0; e < n; ++e) {
        for (std::size_t k = 0; k < d * nu; ++k) {
            out[e * d * nu + k] = finish_value(y[e * d * nu + k], f.standardization[e], nonneg);
        }
    }
    return out;
}

std::vector<double> direct_quantile_forecast(const GmqModel& model, const SeriesDataset& ds, Cut cut,
                                             std::span<const double> u_vec) {
    const std::size_t d = model.horizon();
    if (u_vec.size() != d) throw ShapeError("direct_quantile_forecast: u_vec must have length d");
    const Cut cuts[] = {cut};
    const CutFeatures f = model_features(model, ds, cuts);
    const Tensor ctx = model.contexts(f);
    std::vector<double> z(d);
    for (std::size_t i = 0; i < d; ++i) z[i] = std_normal_quantile(u_vec[i]);
    const Tensor y = model.qnet().forward_batch(z, ctx);
    const bool nonneg = model.config().nonnegative || ds.nonnegative;
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = finish_value(y[i], f.standardization[0], nonneg);
    return out;
}

// ---- scoring --------------------------------------------------------------

std::vector<AnomalyScore> anomaly_scores(const GmqModel& model, const SeriesDataset& ds, std::span<const Cut> cuts,
                                         const Tensor& y) {
    const std::size_t d = model.horizon();
    const std::size_t n = cuts.size();
    if (y.size() != n * d) throw AlignmentError("anomaly_scores: observations must be [N, d]");
    y.require_finite("observations");
    const CutFeatures f = model_features(model, ds, cuts);
    const Tensor ctx = model.contexts(f);
    const std::vector<CopulaFactor> lf = model.factors(ctx);
    std::vector<double> ys(n * d);
    for (std::size_t e = 0; e < n; ++e) {
        for (std::size_t i = 0; i < d; ++i) ys[e * d + i] = f.standardization[e].apply(y[e * d + i]);
    }
    const Tensor z = model.qnet().inverse_batch(ys, ctx);
    std::vector<AnomalyScore> out(n);
    for (std::size_t e = 0; e < n; ++e) {
        AnomalyScore& a = out[e];
        a.u_tilde = Tensor({d});
        a.z_star_tilde = Tensor({d});
        for (std::size_t i = 0; i < d; ++i) {
            const double zi = std::clamp(z[e * d + i], -kScoreClamp, kScoreClamp);
            a.z_star_tilde[i] = zi;
            a.u_tilde[i] = std_normal_cdf(zi);
        }
        a.joint = copula_nll(lf[e], a.z_star_tilde.span());
    }
    return out;
}

AnomalyScore anomaly_score(const GmqModel& model, const SeriesDataset& ds, Cut cut, std::span<const double> y) {
    const Cut cuts[] = {cut};
    return std::move(
        anomaly_scores(model, ds, cuts, Tensor({1, y.size()}, std::vector<double>(y.begin(), y.end()))).front());
}

Tensor whitened_latents(const GmqModel& model, const SeriesDataset& ds, std::span<const Cut> cuts) {
    const std::size_t d = model.horizon();
    const CutFeatures f = model_features(model, ds, cuts);
    f.targets.require_finite("observed targets for whitening");
    const Tensor ctx = model.contexts(f);
    const std::vector<CopulaFactor> lf = model.factors(ctx);
    const Tensor zt = infer_scores(model.qnet(), ctx, f.targets);
    Tensor out({cuts.size(), d});
    for (std::size_t e = 0; e < cuts.size(); ++e) {
        const Tensor w = whiten(lf[e], zt.row(e));
        std::copy_n(w.data(), d, out.data() + e * d);
    }
    return out;
}

Tensor training_whitened_matrix(const GmqModel& model, const SeriesDataset& ds, std::size_t per_series) {
    if (per_series == 0) throw DomainError("training_whitened_matrix: per_series must be >= 1");
    const std::vector<Cut> all = training_cuts(ds);
    const std::size_t m = ds.series.size();
    std::vector<std::vector<Cut>> by_series(m);
    for (const Cut& c : all) by_series[c.series].push_back(c);
    std::vector<Cut> chosen;
    for (std::size_t s = 0; s < m; ++s) {
        if (by_series[s].size() < per_series) {
            throw InsufficientDataError("series '" + ds.series[s].id + "' has " + std::to_string(by_series[s].size()) +
                                        " training cuts, " + std::to_string(per_series) + " required");
        }
        chosen.insert(chosen.end(), by_series[s].end() - static_cast<std::ptrdiff_t>(per_series), by_series[s].end());
    }
    const Tensor w = whitened_latents(model, ds, chosen);
    return w.reshaped({m, per_series * model.horizon()});
}

// ---- cross-series ---------------------------------------------------------

CrossSeriesCovariance fit_cross_series(const Tensor& whitened, double shrinkage, double threshold) {
    if (whitened.rank() != 2) throw ShapeError("fit_cross_series: expected [M, n] matrix");
    const std::size_t m = whitened.rows();
    const std::size_t n = whitened.cols();
    if (n < 2) throw InsufficientDataError("fit_cross_series: need at least 2 columns");
    if (m < 2) throw InsufficientDataError("fit_cross_series: need at least 2 series");
    if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) throw DomainError("fit_cross_series: shrinkage must be in [0,1]");
    if (!(threshold >= 0.0)) throw DomainError("fit_cross_series: threshold must be >= 0");
    whitened.require_finite("whitened latents");

    Eigen::MatrixXd x(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = whitened(i, j);
    }
    x.colwise() -= x.rowwise().mean();
    const Eigen::VectorXd norms = x.rowwise().norm();
    Eigen::MatrixXd s = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index j = 0; j < i; ++j) {
            double r = 0.0;
            if (norms(i) > 0.0 && norms(j) > 0.0) r = x.row(i).dot(x.row(j)) / (norms(i) * norms(j));
            r = (1.0 - shrinkage) * std::clamp(r, -1.0, 1.0);
            if (std::fabs(r) < threshold) r = 0.0;
            s(i, j) = r;
            s(j, i) = r;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
    Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(1e-8);
    s = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
    const Eigen::VectorXd inv_sd = s.diagonal().cwiseSqrt().cwiseInverse();
    s = inv_sd.asDiagonal() * s * inv_sd.asDiagonal();

    CrossSeriesCovariance out;
    out.shrinkage = shrinkage;
    out.threshold = threshold;
    out.s_hat = Tensor({m, m});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            // Symmetrize exactly and pin the diagonal against rounding.
            const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
            out.s_hat(i, j) = i == j ? 1.0 : 0.5 * (s(a, b) + s(b, a));
        }
    }
    return out;
}

std::vector<ForecastPaths> simulate_cross_series(const GmqModel& model, const SeriesDataset& ds,
                                                 std::span<const Cut> cuts, const CrossSeriesCovariance& s_hat,
                                                 std::size_t paths, std::uint64_t seed) {
    if (paths == 0) throw DomainError("simulate_cross_series: K must be >= 1");
    const std::size_t m = cuts.size();
    const std::size_t d = model.horizon();
    const std::size_t c = model.context_dim();
    if (s_hat.s_hat.rank() != 2 || s_hat.s_hat.rows() != m || s_hat.s_hat.cols() != m) {
        throw ShapeError("simulate_cross_series: S_hat must be [M, M] with M = number of cuts");
    }
    Eigen::MatrixXd s(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s_hat.s_hat(i, j);
        }
    }
    if (!s.allFinite() || (s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10 ||
        (s.diagonal().array() - 1.0).abs().maxCoeff() > 1e-10) {
        throw DomainError("simulate_cross_series: S_hat must be a symmetric unit-diagonal matrix");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) throw DomainError("simulate_cross_series: S_hat is not positive definite");
    const Eigen::MatrixXd chol = llt.matrixL();

    const CutFeatures f = model_features(model, ds, cuts);
    const Tensor ctx = model.contexts(f);
    const std::vector<CopulaFactor> lf = model.factors(ctx);
    const bool nonneg = model.config().nonnegative || ds.nonnegative;

    std::vector<ForecastPaths> out(m);
    for (std::size_t n = 0; n < m; ++n) {
        out[n].series_id = ds.series[cuts[n].series].id;
        out[n].origin = cuts[n].origin;
        out[n].seed = seed;
        out[n].samples = Tensor({paths, d});
        out[n].latents = Tensor({paths, d});
    }
    const RngState base(seed, 0);
    Eigen::MatrixXd z0(m, d);
    for (std::size_t k = 0; k < paths; ++k) {
        RngState prng = base.split(k);
        for (Eigen::Index i = 0; i < z0.rows(); ++i) {
            for (Eigen::Index j = 0; j < z0.cols(); ++j) z0(i, j) = prng.normal();
        }
        const Eigen::MatrixXd z = chol.triangularView<Eigen::Lower>() * z0;
        for (std::size_t n = 0; n < m; ++n) {
            for (std::size_t i = 0; i < d; ++i) {
                out[n].latents(k, i) = z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(i));
            }
        }
    }
    for (std::size_t n = 0; n < m; ++n) {
        for (std::size_t b = 0; b < paths; b += kPathChunk) {
            const std::size_t k = std::min(kPathChunk, paths - b);
            Tensor tiled({k * d, c});
            std::vector<double> zs(k * d);
            for (std::size_t p = 0; p < k; ++p) {
                tri::mul_lower(d, lf[n].lower().span(), out[n].latents.row(b + p), {zs.data() + p * d, d});
                std::copy_n(ctx.data() + n * d * c, d * c, tiled.data() + p * d * c);
            }
            const Tensor y = model.qnet().forward_batch(zs, tiled);
            for (std::size_t r = 0; r < k * d; ++r) {
                out[n].samples[b * d + r] = finish_value(y[r], f.standardization[n], nonneg);
            }
        }
    }
    return out;
}

}  // namespace gmq
