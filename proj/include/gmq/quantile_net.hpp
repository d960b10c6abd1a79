#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gmq/autodiff.hpp"
#include "gmq/nn.hpp"
#include "gmq/rng.hpp"
#include "gmq/tensor.hpp"

namespace gmq {

/// Pinball loss u (y - y_hat)_+ + (1 - u)(y_hat - y)_+. Throws DomainError unless 0 < u < 1.
double quantile_loss(double u, double y, double y_hat);

/// Quantile levels are drawn from this open band so their normal scores stay finite.
inline constexpr double kQuantileIndexLow = 1e-4;
inline constexpr double kQuantileIndexHigh = 1.0 - 1e-4;

/// A quantile index and its normal score, z_star = Phi^{-1}(u).
struct QuantileIndexDraw {
    double u;
    double z_star;

    static QuantileIndexDraw sample(RngState& rng);
};

/// Generative quantile function g(z*, c) and its learned inverse g^{-1}(y, c).
///
/// Both nets take [value, context...] as input and emit one scalar. The
/// forward net maps a normal score to a target value; the inverse net maps a
/// target value back to a normal score. Parameter sets are disjoint.
class QuantileNet {
public:
    QuantileNet() = default;
    QuantileNet(std::size_t context_dim, std::vector<std::size_t> hidden, nn::Activation act, RngState& rng);

    [[nodiscard]] std::size_t context_dim() const noexcept { return context_dim_; }
    [[nodiscard]] const std::vector<std::size_t>& hidden() const noexcept { return hidden_; }

    [[nodiscard]] double forward(double z_star, std::span<const double> context) const;
    [[nodiscard]] double inverse(double y, std::span<const double> context) const;
    /// Batched: z_star [N], contexts [N, c] -> [N].
    [[nodiscard]] Tensor forward_batch(std::span<const double> z_star, const Tensor& contexts) const;
    [[nodiscard]] Tensor inverse_batch(std::span<const double> y, const Tensor& contexts) const;

    /// Differentiable versions; value column [N,1] and contexts [N,c] -> [N,1].
    ad::Var forward_graph(ad::Tape& tape, ad::Var value_col, ad::Var contexts);
    ad::Var inverse_graph(ad::Tape& tape, ad::Var value_col, ad::Var contexts);

    nn::Mlp& forward_net() noexcept { return forward_; }
    nn::Mlp& inverse_net() noexcept { return inverse_; }
    [[nodiscard]] const nn::Mlp& forward_net() const noexcept { return forward_; }
    [[nodiscard]] const nn::Mlp& inverse_net() const noexcept { return inverse_; }

    void collect_forward(std::vector<ad::Parameter*>& out) { forward_.collect(out); }
    void collect_inverse(std::vector<ad::Parameter*>& out) { inverse_.collect(out); }

private:
    void check_context(std::size_t n) const;
    [[nodiscard]] Tensor stack_inputs(std::span<const double> first, const Tensor& contexts) const;

    std::size_t context_dim_ = 0;
    std::vector<std::size_t> hidden_;
    nn::Mlp forward_;
    nn::Mlp inverse_;
};

struct TrainConfig {
    double learning_rate = 0.02;
    double momentum = 0.9;
    int epochs = 60;
    /// Rows per minibatch for train_marginal; examples per minibatch in the forecaster.
    std::size_t batch_size = 256;
    /// Weight of the inverse reconstruction loss relative to the pinball loss.
    double inverse_weight = 1.0;
    /// Global gradient-norm cap (0 disables).
    double clip_norm = 10.0;
    std::uint64_t seed = 1;
};

/// Per-epoch averages. l3 is empty until a copula is trained.
struct LossHistory {
    std::vector<double> l1;
    std::vector<double> l2;
    std::vector<double> l3;
};

/// (context, target) pairs for fitting a quantile net on its own.
struct MarginalData {
    Tensor contexts;  // [N, c]
    std::vector<double> y;
};

/// One step's losses over a batch of rows.
struct MarginalLoss {
    ad::Var l1;
    ad::Var l2;
    ad::Var total;
};

/// Builds l1 (mean pinball at the drawn u) and l2 (mean squared
/// reconstruction of z* from the generated y_hat). The inverse net sees
/// y_hat and contexts detached, so l2 only trains the inverse net.
MarginalLoss build_marginal_loss(ad::Tape& tape, QuantileNet& net, ad::Var contexts, const Tensor& y,
                                 std::span<const QuantileIndexDraw> draws, double inverse_weight);

/// Minibatch training of l1 + inverse_weight * l2 with a fresh u per row
/// per epoch. Throws TrainingDivergedError on a non-finite loss.
LossHistory train_marginal(QuantileNet& net, const MarginalData& data, const TrainConfig& cfg);

}  // namespace gmq
