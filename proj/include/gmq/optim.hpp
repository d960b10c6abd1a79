#pragma once

#include <cstddef>
#include <span>

#include "gmq/autodiff.hpp"

namespace gmq {

/// SGD with heavy-ball momentum and a cosine-decayed step size
/// lr(t) = lr0 * (1 + cos(pi * t / total)) / 2.
class SgdMomentum {
public:
    SgdMomentum(double lr0, double momentum, std::size_t total_steps, double clip_norm = 0.0)
        : lr0_(lr0), momentum_(momentum), total_(total_steps), clip_norm_(clip_norm) {}

    [[nodiscard]] double current_lr() const;
    [[nodiscard]] std::size_t steps_taken() const noexcept { return step_; }

    /// Applies one update from the accumulated gradients and zeroes them.
    /// With clip_norm > 0 the global gradient norm is capped first.
    void step(std::span<ad::Parameter* const> params);

private:
    double lr0_;
    double momentum_;
    std::size_t total_;
    double clip_norm_;
    std::size_t step_ = 0;
};

}  // namespace gmq
