#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "gmq/tensor.hpp"

namespace gmq {

/// Counter-based random stream (Philox4x32-10).
///
/// A stream is identified by (seed, stream index); every draw advances a
/// 64-bit block counter. Two states with equal seed, stream and call sequence
/// produce bit-identical output, and distinct stream indices give independent
/// sequences, so parallel work can be keyed by path or series index.
class RngState {
public:
    explicit RngState(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept
        : seed_(seed), stream_(stream) {}

    /// Independent child stream. Children of the same parent with different
    /// `index` never overlap each other or the parent.
    [[nodiscard]] RngState split(std::uint64_t index) const noexcept;

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t stream() const noexcept { return stream_; }
    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64();
    /// Uniform in the open interval (0, 1), 53-bit resolution.
    double uniform();
    /// Uniform in (lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

private:
    std::array<std::uint32_t, 4> block();

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int buffered_ = 0;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

/// n i.i.d. standard normal draws as a rank-1 tensor.
Tensor sample_std_normal(RngState& rng, std::size_t n);

}  // namespace gmq
