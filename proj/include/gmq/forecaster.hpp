#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gmq/autodiff.hpp"
#include "gmq/copula.hpp"
#include "gmq/dataset.hpp"
#include "gmq/nn.hpp"
#include "gmq/quantile_net.hpp"
#include "gmq/tensor.hpp"

namespace gmq {

struct ModelConfig {
    std::size_t horizon = 8;
    std::size_t history = 52;
    std::size_t n_hist = 0;
    std::size_t n_future = 0;
    std::size_t n_static = 0;
    std::size_t encoder_hidden = 32;
    std::size_t embedding = 16;
    std::size_t horizon_embedding = 4;
    std::vector<std::size_t> qnet_hidden{64, 64};
    std::size_t copula_hidden = 64;
    std::size_t max_horizon = 64;
    nn::Activation activation = nn::Activation::Tanh;
    bool nonnegative = false;

    /// Schema fields (horizon, history, covariate counts, nonnegative) taken from a dataset.
    static ModelConfig for_dataset(const SeriesDataset& ds);
    void validate() const;
};

struct GmqTrainConfig {
    TrainConfig phase1;
    TrainConfig phase2{.learning_rate = 0.01, .epochs = 30, .batch_size = 128, .seed = 2};
    /// false skips phase 2, leaving the independence copula.
    bool copula = true;
    /// Phase 2 updates only the copula head. false fine-tunes encoder and
    /// inverse net together with the head.
    bool freeze_phase1 = true;
};

struct GmqHistory {
    LossHistory losses;  // l1, l2 per phase-1 epoch; l3 per phase-2 epoch
};

/// Windowed-MLP encoder, learned horizon embedding, quantile nets and copula head.
///
/// Context for horizon i of a cut: [encoder embedding | horizon embedding i |
/// future covariates at origin + i].
class GmqModel {
public:
    GmqModel() = default;
    GmqModel(ModelConfig cfg, std::uint64_t seed);

    [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::size_t horizon() const noexcept { return cfg_.horizon; }
    [[nodiscard]] std::size_t context_dim() const noexcept;
    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    [[nodiscard]] bool has_copula() const noexcept { return has_copula_; }
    void set_has_copula(bool v) noexcept { has_copula_ = v; }
    [[nodiscard]] bool phase1_done() const noexcept { return phase1_done_; }
    void set_phase1_done(bool v) noexcept { phase1_done_ = v; }

    /// Contexts for every cut: [N*d, c], row n*d + i is horizon i of cut n.
    [[nodiscard]] Tensor contexts(const CutFeatures& f) const;
    /// Differentiable contexts for rows `rows` of `f`.
    ad::Var contexts_graph(ad::Tape& tape, const CutFeatures& f, std::span<const std::size_t> rows);

    /// Copula factor per cut (identity when no copula has been trained).
    [[nodiscard]] std::vector<CopulaFactor> factors(const Tensor& contexts) const;

    /// Stored standardization when the series id was seen in training,
    /// otherwise computed from the series' own training range.
    [[nodiscard]] std::vector<Standardization> standardization_for(const SeriesDataset& ds) const;
    void remember_standardization(const SeriesDataset& ds);
    [[nodiscard]] const std::vector<std::string>& known_ids() const noexcept { return ids_; }
    [[nodiscard]] const std::vector<Standardization>& known_stats() const noexcept { return stats_; }
    void set_known(std::vector<std::string> ids, std::vector<Standardization> stats);

    QuantileNet& qnet() noexcept { return qnet_; }
    [[nodiscard]] const QuantileNet& qnet() const noexcept { return qnet_; }
    CopulaHead& head() noexcept { return head_; }
    [[nodiscard]] const CopulaHead& head() const noexcept { return head_; }
    nn::Mlp& encoder() noexcept { return encoder_; }
    [[nodiscard]] const nn::Mlp& encoder() const noexcept { return encoder_; }

    /// Every parameter in a fixed order: encoder, horizon embedding,
    /// forward net, inverse net, copula head.
    std::vector<ad::Parameter*> parameters();
    [[nodiscard]] std::vector<const ad::Parameter*> parameters() const;
    void collect_encoder(std::vector<ad::Parameter*>& out);

private:
    ModelConfig cfg_;
    std::uint64_t seed_ = 0;
    nn::Mlp encoder_;
    ad::Parameter horizon_emb_;
    QuantileNet qnet_;
    CopulaHead head_;
    bool has_copula_ = false;
    bool phase1_done_ = false;
    std::vector<std::string> ids_;
    std::vector<Standardization> stats_;
};

/// Features for `cuts` using the model's standardization.
CutFeatures model_features(const GmqModel& model, const SeriesDataset& ds, std::span<const Cut> cuts);

/// Contexts [d, c] for one cut.
Tensor encode_contexts(const GmqModel& model, const SeriesDataset& ds, Cut cut);

/// Phase 1 over every training cut, then (unless disabled) phase 2.
GmqHistory train_gmq(GmqModel& model, const SeriesDataset& ds, const GmqTrainConfig& cfg);

/// Phase 2 only, on a model whose phase 1 is complete. Returns per-epoch l3.
std::vector<double> train_gmq_copula(GmqModel& model, const SeriesDataset& ds, const GmqTrainConfig& cfg);

/// K simulated futures for one cut.
struct ForecastPaths {
    std::string series_id;
    std::size_t origin = 0;
    std::uint64_t seed = 0;
    Tensor samples;  // [K, d], de-standardized
    Tensor latents;  // [K, d], the independent z fed to the copula

    [[nodiscard]] std::size_t paths() const { return samples.rows(); }
    [[nodiscard]] std::size_t horizon() const { return samples.cols(); }
};

/// Path k of cut n uses RngState(seed, n).split(k); results do not depend
/// on `workers`.
std::vector<ForecastPaths> simulate_paths(const GmqModel& model, const SeriesDataset& ds, std::span<const Cut> cuts,
                                          std::size_t paths, std::uint64_t seed, std::size_t workers = 1);
ForecastPaths simulate_paths(const GmqModel& model, const SeriesDataset& ds, Cut cut, std::size_t paths,
                             std::uint64_t seed, std::size_t workers = 1);

/// y_i = g(Phi^{-1}(u_i), c_i), de-standardized; the copula is not used.
std::vector<double> direct_quantile_forecast(const GmqModel& model, const SeriesDataset& ds, Cut cut,
                                             std::span<const double> u_vec);
/// Every u in `u_set` at every horizon of every cut: [N, d, U] flattened as [N, d*U].
Tensor direct_quantiles(const GmqModel& model, const SeriesDataset& ds, std::span<const Cut> cuts,
                        std::span<const double> u_set);

struct AnomalyScore {
    Tensor u_tilde;        // [d]
    Tensor z_star_tilde;   // [d], clamped to +-kScoreClamp
    double joint = 0.0;    // copula NLL, higher is more anomalous
};

/// Scores raw observations y[d] at a cut.
AnomalyScore anomaly_score(const GmqModel& model, const SeriesDataset& ds, Cut cut, std::span<const double> y);
std::vector<AnomalyScore> anomaly_scores(const GmqModel& model, const SeriesDataset& ds, std::span<const Cut> cuts,
                                         const Tensor& y);

/// Whitened latents L^{-1} z~* of the observed targets at each cut: [N, d].
Tensor whitened_latents(const GmqModel& model, const SeriesDataset& ds, std::span<const Cut> cuts);

/// Rows of whitened latents for every series: the `per_series` most recent
/// training cuts common to all series, concatenated -> [M, per_series*d].
Tensor training_whitened_matrix(const GmqModel& model, const SeriesDataset& ds, std::size_t per_series);

struct CrossSeriesCovariance {
    Tensor s_hat;  // [M, M]
    double shrinkage = 0.0;
    double threshold = 0.0;
};

/// Shrunk, optionally thresholded sample correlation of the rows of
/// `whitened` [M, n], floored to eigenvalues >= 1e-8 and rescaled to a unit
/// diagonal.
CrossSeriesCovariance fit_cross_series(const Tensor& whitened, double shrinkage = 0.1, double threshold = 0.0);

/// For path k, Z = chol(S) Z0 with Z0 [M, d] i.i.d. normal from
/// RngState(seed, 0).split(k); row m drives series m like simulate_paths.
std::vector<ForecastPaths> simulate_cross_series(const GmqModel& model, const SeriesDataset& ds,
                                                 std::span<const Cut> cuts, const CrossSeriesCovariance& s_hat,
                                                 std::size_t paths, std::uint64_t seed);

}  // namespace gmq
