#include "gmq/copula.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gmq/error.hpp"
#include "gmq/linalg.hpp"
#include "gmq/normal.hpp"
#include "gmq/optim.hpp"

namespace gmq {

namespace {

std::size_t dim_from_raw(std::size_t n_diag, std::size_t n_off) {
    if (n_diag == 0) throw DomainError("constrain_L: d = 0");
    if (n_off != n_diag * (n_diag - 1) / 2) {
        throw ShapeError("constrain_L: " + std::to_string(n_off) + " off-diagonal values for d = " +
                         std::to_string(n_diag));
    }
    return n_diag;
}

void check_len(const CopulaFactor& f, std::size_t n, const char* what) {
    if (n != f.dim()) {
        throw ShapeError(std::string(what) + ": vector length " + std::to_string(n) + " vs d = " +
                         std::to_string(f.dim()));
    }
}

}  // namespace

CopulaFactor::CopulaFactor(Tensor lower, double tol) : lower_(std::move(lower)) {
    if (lower_.rank() != 2 || lower_.rows() != lower_.cols() || lower_.rows() == 0) {
        throw ShapeError("CopulaFactor: expected non-empty square matrix, got " + lower_.shape_string());
    }
    d_ = lower_.rows();
    for (std::size_t i = 0; i < d_; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d_; ++j) {
            const double v = lower_(i, j);
            if (j > i && v != 0.0) throw DomainError("CopulaFactor: non-zero entry above diagonal");
            sq += v * v;
        }
        if (!(lower_(i, i) > 0.0)) throw DomainError("CopulaFactor: non-positive diagonal");
        if (std::fabs(std::sqrt(sq) - 1.0) > tol) throw DomainError("CopulaFactor: row norm differs from 1");
    }
}

CopulaFactor CopulaFactor::identity(std::size_t d) {
    Tensor l({d, d});
    for (std::size_t i = 0; i < d; ++i) l(i, i) = 1.0;
    return CopulaFactor(std::move(l));
}

Tensor CopulaFactor::correlation() const {
    Tensor r({d_, d_});
    for (std::size_t i = 0; i < d_; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k <= j; ++k) s += lower_(i, k) * lower_(j, k);
            r(i, j) = s;
            r(j, i) = s;
        }
    }
    return r;
}

CopulaFactor constrain_L(std::span<const double> raw_diag, std::span<const double> raw_off) {
    const std::size_t d = dim_from_raw(raw_diag.size(), raw_off.size());
    ad::Tape tape;
    const ad::Var l = ad::constrain_lower(tape.constant(Tensor({1, d}, {raw_diag.begin(), raw_diag.end()})),
                                          tape.constant(Tensor({1, raw_off.size()}, {raw_off.begin(), raw_off.end()})));
    return CopulaFactor(l.value().reshaped({d, d}));
}

CopulaDraw copula_sample(const CopulaFactor& factor, std::span<const double> z) {
    check_len(factor, z.size(), "copula_sample");
    const std::size_t d = factor.dim();
    CopulaDraw out{Tensor({d}), Tensor({d})};
    tri::mul_lower(d, factor.lower().span(), z, out.z_star.span());
    for (std::size_t i = 0; i < d; ++i) out.u[i] = std_normal_cdf(out.z_star[i]);
    return out;
}

double copula_nll(const CopulaFactor& factor, std::span<const double> z_star_tilde) {
    check_len(factor, z_star_tilde.size(), "copula_nll");
    const Tensor z = whiten(factor, z_star_tilde);
    double q = 0.0;
    for (double v : z.values()) q += v * v;
    return 2.0 * log_det_lower_tri(factor.lower()) + q;
}

Tensor whiten(const CopulaFactor& factor, std::span<const double> z_star_tilde) {
    check_len(factor, z_star_tilde.size(), "whiten");
    return lower_tri_solve(factor.lower(), Tensor({factor.dim()}, {z_star_tilde.begin(), z_star_tilde.end()}));
}

ad::Var copula_nll_graph(ad::Var lower, const Tensor& z_star_tilde) {
    ad::Tape& tape = *lower.tape;
    const ad::Var z = ad::tri_solve(lower, tape.constant(z_star_tilde));
    const ad::Var quad = ad::row_sum(ad::square(z));
    const ad::Var logdet = ad::log_det_tri(lower);
    return ad::mean(ad::add(ad::scale(logdet, 2.0), quad));
}

CopulaHead::CopulaHead(std::size_t pooled_dim, std::size_t d, std::size_t hidden, RngState& rng)
    : d_(d), net_("copula.head", {pooled_dim, hidden, d + d * (d - 1) / 2}, nn::Activation::Tanh,
                  nn::Activation::Identity, rng) {
    if (d == 0) throw DomainError("CopulaHead: d = 0");
    net_.layers().back().weight.value.fill(0.0);
}

ad::Var CopulaHead::lower_graph(ad::Tape& tape, ad::Var pooled) {
    const ad::Var raw = net_.forward(tape, pooled);
    const std::size_t n_off = d_ * (d_ - 1) / 2;
    const ad::Var diag = ad::slice_cols(raw, 0, d_);
    const ad::Var off = ad::slice_cols(raw, d_, n_off);
    return ad::constrain_lower(diag, off);
}

std::vector<CopulaFactor> CopulaHead::factors(const Tensor& pooled) const {
    const Tensor raw = net_.infer(pooled);
    const std::size_t e = raw.rows();
    const std::size_t n_off = d_ * (d_ - 1) / 2;
    std::vector<CopulaFactor> out;
    out.reserve(e);
    for (std::size_t r = 0; r < e; ++r) {
        const double* row = raw.data() + r * (d_ + n_off);
        out.push_back(constrain_L({row, d_}, {row + d_, n_off}));
    }
    return out;
}

CopulaFactor CopulaHead::factor(std::span<const double> pooled) const {
    if (pooled.size() != pooled_dim()) throw ShapeError("CopulaHead: pooled context length mismatch");
    return factors(Tensor({1, pooled.size()}, {pooled.begin(), pooled.end()})).front();
}

std::vector<double> train_copula(CopulaHead& head, const CopulaData& data, const TrainConfig& cfg) {
    const std::size_t n = data.pooled.rows();
    const std::size_t d = head.dim();
    const std::size_t p = head.pooled_dim();
    if (n == 0) throw InsufficientDataError("train_copula: empty dataset");
    if (data.pooled.cols() != p || data.z_star_tilde.size() != n * d) {
        throw ShapeError("train_copula: data shapes " + data.pooled.shape_string() + ", " +
                         data.z_star_tilde.shape_string() + " vs head");
    }
    std::vector<ad::Parameter*> params;
    head.collect(params);
    const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    SgdMomentum opt(cfg.learning_rate, cfg.momentum, batches * static_cast<std::size_t>(cfg.epochs), cfg.clip_norm);
    RngState rng(cfg.seed, 2);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> history;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngState erng = rng.split(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[erng.below(i)]);
        double total = 0.0;
        for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const std::size_t m = std::min(cfg.batch_size, n - b0);
            Tensor pooled({m, p});
            Tensor zt({m, d});
            for (std::size_t r = 0; r < m; ++r) {
                const std::size_t idx = order[b0 + r];
                std::copy_n(data.pooled.data() + idx * p, p, pooled.data() + r * p);
                for (std::size_t j = 0; j < d; ++j) {
                    zt(r, j) = std::clamp(data.z_star_tilde[idx * d + j], -kScoreClamp, kScoreClamp);
                }
            }
            ad::Tape tape;
            const ad::Var lower = head.lower_graph(tape, tape.constant(std::move(pooled)));
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t i = 0; i < d; ++i) {
                    if (!(lower.value()[r * d * d + i * d + i] >= 1e-6)) {
                        throw Error("train_copula: constrained factor diagonal below 1e-6 (invariant violation)");
                    }
                }
            }
            const ad::Var loss = copula_nll_graph(lower, zt);
            const double v = loss.value()[0];
            if (!std::isfinite(v)) throw TrainingDivergedError("copula", epoch);
            tape.backward(loss);
            opt.step(params);
            total += v * static_cast<double>(m);
        }
        history.push_back(total / static_cast<double>(n));
    }
    return history;
}

Tensor infer_scores(const QuantileNet& frozen, const Tensor& contexts, const Tensor& y) {
    const std::size_t c = frozen.context_dim();
    const std::size_t e = y.rows();
    const std::size_t d = y.cols();
    if (contexts.size() != e * d * c) throw ShapeError("infer_scores: contexts do not match [E, d*c]");
    const Tensor flat_ctx = contexts.reshaped({e * d, c});
    Tensor z = frozen.inverse_batch(y.span(), flat_ctx);
    for (double& v : z.values()) v = std::clamp(v, -kScoreClamp, kScoreClamp);
    return z.reshaped({e, d});
}

std::vector<double> train_copula(CopulaHead& head, const QuantileNet& frozen, const Tensor& contexts,
                                 const Tensor& y, const TrainConfig& cfg) {
    CopulaData data;
    data.z_star_tilde = infer_scores(frozen, contexts, y);
    data.pooled = contexts.reshaped({y.rows(), contexts.size() / y.rows()});
    return train_copula(head, data, cfg);
}

double inverse_reconstruction_rms(const QuantileNet& net, const Tensor& contexts, RngState& rng,
                                  std::size_t draws) {
    const std::size_t n = contexts.rows();
    const std::size_t c = net.context_dim();
    if (n == 0 || draws == 0) throw InsufficientDataError("inverse_reconstruction_rms: no data");
    Tensor ctx({draws, c});
    std::vector<double> z(draws);
    for (std::size_t i = 0; i < draws; ++i) {
        const std::size_t row = rng.below(n);
        std::copy_n(contexts.data() + row * c, c, ctx.data() + i * c);
        z[i] = QuantileIndexDraw::sample(rng).z_star;
    }
    const Tensor y = net.forward_batch(z, ctx);
    const Tensor zh = net.inverse_batch(y.span(), ctx);
    double sq = 0.0;
    for (std::size_t i = 0; i < draws; ++i) sq += (zh[i] - z[i]) * (zh[i] - z[i]);
    return std::sqrt(sq / static_cast<double>(draws));
}

}  // namespace gmq
