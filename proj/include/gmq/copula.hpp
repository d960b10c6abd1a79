#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gmq/autodiff.hpp"
#include "gmq/nn.hpp"
#include "gmq/quantile_net.hpp"
#include "gmq/rng.hpp"
#include "gmq/tensor.hpp"

namespace gmq {

/// Normal scores entering the likelihood are clamped to +-8.
inline constexpr double kScoreClamp = 8.0;

/// Lower-triangular L with positive diagonal and unit row norms, so that
/// L L^T is a correlation matrix. Defines a Gaussian copula.
class CopulaFactor {
public:
    CopulaFactor() = default;
    /// Takes a [d,d] matrix; throws DomainError if the invariants fail.
    explicit CopulaFactor(Tensor lower, double tol = 1e-10);

    static CopulaFactor identity(std::size_t d);

    [[nodiscard]] std::size_t dim() const noexcept { return d_; }
    [[nodiscard]] const Tensor& lower() const noexcept { return lower_; }
    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return lower_(i, j); }
    /// R = L L^T.
    [[nodiscard]] Tensor correlation() const;

private:
    std::size_t d_ = 0;
    Tensor lower_;
};

/// Guardrailed construction: diagonal max(raw, 1), off-diagonal tanh(raw),
/// then each row divided by its l2 norm. raw_off is row-major over the
/// strictly lower triangle (row i holds i entries).
CopulaFactor constrain_L(std::span<const double> raw_diag, std::span<const double> raw_off);

struct CopulaDraw {
    Tensor z_star;  // L z
    Tensor u;       // Phi(L z)
};

CopulaDraw copula_sample(const CopulaFactor& factor, std::span<const double> z);

/// 2 log|L| + ||L^{-1} z~*||^2 (the d log 2pi constant is omitted).
double copula_nll(const CopulaFactor& factor, std::span<const double> z_star_tilde);

/// Implied independent latents L^{-1} z~*.
Tensor whiten(const CopulaFactor& factor, std::span<const double> z_star_tilde);

/// Mean copula NLL over a batch: lower [E, d*d] node, scores [E, d] constant.
ad::Var copula_nll_graph(ad::Var lower, const Tensor& z_star_tilde);

/// Maps a pooled context vector to a CopulaFactor through one tanh hidden
/// layer and a linear output of d raw diagonal + d(d-1)/2 raw off-diagonal
/// values. The output layer starts at zero, i.e. the independence copula.
class CopulaHead {
public:
    CopulaHead() = default;
    CopulaHead(std::size_t pooled_dim, std::size_t d, std::size_t hidden, RngState& rng);

    [[nodiscard]] std::size_t dim() const noexcept { return d_; }
    [[nodiscard]] std::size_t pooled_dim() const noexcept { return net_.in_dim(); }
    [[nodiscard]] std::size_t hidden() const noexcept { return net_.widths()[1]; }

    [[nodiscard]] CopulaFactor factor(std::span<const double> pooled) const;
    [[nodiscard]] std::vector<CopulaFactor> factors(const Tensor& pooled) const;
    /// [E, pooled_dim] -> constrained factors [E, d*d].
    ad::Var lower_graph(ad::Tape& tape, ad::Var pooled);

    nn::Mlp& net() noexcept { return net_; }
    [[nodiscard]] const nn::Mlp& net() const noexcept { return net_; }
    void collect(std::vector<ad::Parameter*>& out) { net_.collect(out); }

private:
    std::size_t d_ = 0;
    nn::Mlp net_;
};

/// Phase-2 training data: pooled contexts [E, P] and inferred scores [E, d].
struct CopulaData {
    Tensor pooled;
    Tensor z_star_tilde;
};

/// Minimizes the mean copula NLL by minibatch SGD. Returns per-epoch mean NLL.
std::vector<double> train_copula(CopulaHead& head, const CopulaData& data, const TrainConfig& cfg);

/// Normal scores of observations through a frozen inverse net, clamped to
/// +-kScoreClamp. contexts [E, d*c], y [E, d] -> [E, d].
Tensor infer_scores(const QuantileNet& frozen, const Tensor& contexts, const Tensor& y);

/// Convenience: infers scores with the frozen marginals, pools contexts by
/// concatenation and trains the head.
std::vector<double> train_copula(CopulaHead& head, const QuantileNet& frozen, const Tensor& contexts,
                                 const Tensor& y, const TrainConfig& cfg);

/// RMS of inverse(forward(z*, c), c) - z* over `draws` random (z*, c) pairs
/// with contexts taken uniformly from the rows of `contexts` [N, c].
double inverse_reconstruction_rms(const QuantileNet& net, const Tensor& contexts, RngState& rng,
                                  std::size_t draws);

}  // namespace gmq
