#include "gmq/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gmq/simd/kernels.hpp"

namespace gmq {

double SgdMomentum::current_lr() const {
    if (total_ == 0) return lr0_;
    const double frac = std::min(1.0, static_cast<double>(step_) / static_cast<double>(total_));
    return lr0_ * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void SgdMomentum::step(std::span<ad::Parameter* const> params) {
    const auto& k = simd::active();
    double factor = 1.0;
    if (clip_norm_ > 0.0) {
        double sq = 0.0;
        for (const ad::Parameter* p : params) sq += k.dot(p->grad.size(), p->grad.data(), p->grad.data());
        const double norm = std::sqrt(sq);
        if (norm > clip_norm_) factor = clip_norm_ / norm;
    }
    const double lr = current_lr();
    for (ad::Parameter* p : params) {
        if (factor != 1.0) {
            for (double& g : p->grad.values()) g *= factor;
        }
        k.momentum_step(p->value.size(), lr, momentum_, p->grad.data(), p->velocity.data(), p->value.data());
        p->zero_grad();
    }
    ++step_;
}

}  // namespace gmq
