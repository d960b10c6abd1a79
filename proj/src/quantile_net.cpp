#include "gmq/quantile_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gmq/error.hpp"
#include "gmq/normal.hpp"
#include "gmq/optim.hpp"

namespace gmq {

double quantile_loss(double u, double y, double y_hat) {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("quantile_loss: u = " + std::to_string(u) + " outside (0,1)");
    const double diff = y - y_hat;
    return diff > 0.0 ? u * diff : (u - 1.0) * diff;
}

QuantileIndexDraw QuantileIndexDraw::sample(RngState& rng) {
    const double u = rng.uniform(kQuantileIndexLow, kQuantileIndexHigh);
    return {u, std_normal_quantile(u)};
}

namespace {
std::vector<std::size_t> net_widths(std::size_t context_dim, const std::vector<std::size_t>& hidden) {
    std::vector<std::size_t> w{context_dim + 1};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(1);
    return w;
}
}  // namespace

QuantileNet::QuantileNet(std::size_t context_dim, std::vector<std::size_t> hidden, nn::Activation act,
                         RngState& rng)
    : context_dim_(context_dim),
      hidden_(std::move(hidden)),
      forward_("qnet.forward", net_widths(context_dim_, hidden_), act, nn::Activation::Identity, rng),
      inverse_("qnet.inverse", net_widths(context_dim_, hidden_), act, nn::Activation::Identity, rng) {}

void QuantileNet::check_context(std::size_t n) const {
    if (n != context_dim_) {
        throw ShapeError("QuantileNet: context length " + std::to_string(n) + " vs c_dim " +
                         std::to_string(context_dim_));
    }
}

Tensor QuantileNet::stack_inputs(std::span<const double> first, const Tensor& contexts) const {
    const std::size_t n = first.size();
    if (n == 0) return Tensor({0, context_dim_ + 1});
    check_context(contexts.cols());
    if (contexts.rows() != n) throw ShapeError("QuantileNet: value/context row mismatch");
    Tensor x({n, context_dim_ + 1});
    for (std::size_t r = 0; r < n; ++r) {
        x(r, 0) = first[r];
        std::copy_n(contexts.data() + r * context_dim_, context_dim_, x.data() + r * (context_dim_ + 1) + 1);
    }
    return x;
}

double QuantileNet::forward(double z_star, std::span<const double> context) const {
    check_context(context.size());
    const double v[] = {z_star};
    return forward_batch(v, Tensor({1, context_dim_}, std::vector<double>(context.begin(), context.end())))[0];
}

double QuantileNet::inverse(double y, std::span<const double> context) const {
    check_context(context.size());
    const double v[] = {y};
    return inverse_batch(v, Tensor({1, context_dim_}, std::vector<double>(context.begin(), context.end())))[0];
}

Tensor QuantileNet::forward_batch(std::span<const double> z_star, const Tensor& contexts) const {
    if (z_star.empty()) return Tensor({0});
    Tensor out = forward_.infer(stack_inputs(z_star, contexts));
    return out.reshaped({z_star.size()});
}

Tensor QuantileNet::inverse_batch(std::span<const double> y, const Tensor& contexts) const {
    if (y.empty()) return Tensor({0});
    Tensor out = inverse_.infer(stack_inputs(y, contexts));
    return out.reshaped({y.size()});
}

ad::Var QuantileNet::forward_graph(ad::Tape& tape, ad::Var value_col, ad::Var contexts) {
    check_context(contexts.value().cols());
    const ad::Var parts[] = {value_col, contexts};
    return forward_.forward(tape, ad::concat_cols(parts));
}

ad::Var QuantileNet::inverse_graph(ad::Tape& tape, ad::Var value_col, ad::Var contexts) {
    check_context(contexts.value().cols());
    const ad::Var parts[] = {value_col, contexts};
    return inverse_.forward(tape, ad::concat_cols(parts));
}

MarginalLoss build_marginal_loss(ad::Tape& tape, QuantileNet& net, ad::Var contexts, const Tensor& y,
                                 std::span<const QuantileIndexDraw> draws, double inverse_weight) {
    const std::size_t n = draws.size();
    if (y.size() != n || contexts.value().rows() != n) throw ShapeError("build_marginal_loss: row mismatch");
    Tensor z({n, 1});
    Tensor u({n});
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = draws[i].z_star;
        u[i] = draws[i].u;
    }
    const ad::Var z_col = tape.constant(z);
    const ad::Var y_hat = net.forward_graph(tape, z_col, contexts);
    const ad::Var l1 = ad::quantile_loss_mean(y_hat, y, u);
    const ad::Var z_hat = net.inverse_graph(tape, ad::detach(y_hat), ad::detach(contexts));
    const ad::Var l2 = ad::mse_mean(z_hat, z);
    const ad::Var total = ad::add(l1, ad::scale(l2, inverse_weight));
    return {l1, l2, total};
}

LossHistory train_marginal(QuantileNet& net, const MarginalData& data, const TrainConfig& cfg) {
    const std::size_t n = data.y.size();
    if (n == 0) throw InsufficientDataError("train_marginal: empty dataset");
    if (!(cfg.learning_rate > 0.0) || cfg.epochs <= 0 || cfg.batch_size == 0) {
        throw DomainError("train_marginal: learning rate, epochs and batch size must be positive");
    }
    if (data.contexts.rows() != n) throw ShapeError("train_marginal: contexts/targets row mismatch");
    const std::size_t c = net.context_dim();
    if (data.contexts.cols() != c) throw ShapeError("train_marginal: context width mismatch");

    std::vector<ad::Parameter*> params;
    net.collect_forward(params);
    net.collect_inverse(params);
    const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    SgdMomentum opt(cfg.learning_rate, cfg.momentum, batches * static_cast<std::size_t>(cfg.epochs), cfg.clip_norm);

    RngState rng(cfg.seed, 0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    LossHistory hist;
    std::vector<QuantileIndexDraw> draws;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngState erng = rng.split(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[erng.below(i)]);
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const std::size_t m = std::min(cfg.batch_size, n - b0);
            Tensor ctx({m, c});
            Tensor y({m});
            draws.clear();
            for (std::size_t r = 0; r < m; ++r) {
                const std::size_t idx = order[b0 + r];
                std::copy_n(data.contexts.data() + idx * c, c, ctx.data() + r * c);
                y[r] = data.y[idx];
                draws.push_back(QuantileIndexDraw::sample(erng));
            }
            ad::Tape tape;
            const MarginalLoss loss = build_marginal_loss(tape, net, tape.constant(std::move(ctx)), y, draws,
                                                          cfg.inverse_weight);
            const double l1 = loss.l1.value()[0];
            const double l2 = loss.l2.value()[0];
            if (!std::isfinite(l1) || !std::isfinite(l2)) throw TrainingDivergedError("marginal", epoch);
            tape.backward(loss.total);
            opt.step(params);
            s1 += l1 * static_cast<double>(m);
            s2 += l2 * static_cast<double>(m);
        }
        hist.l1.push_back(s1 / static_cast<double>(n));
        hist.l2.push_back(s2 / static_cast<double>(n));
    }
    return hist;
}

}  // namespace gmq
