#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gmq/autodiff.hpp"
#include "gmq/rng.hpp"
#include "gmq/tensor.hpp"

namespace gmq::nn {

enum class Activation { Tanh, Identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Fully connected layer y = x W + b.
struct Dense {
    ad::Parameter weight;  // [in, out]
    ad::Parameter bias;    // [out]

    [[nodiscard]] std::size_t fan_in() const { return weight.value.rows(); }
    [[nodiscard]] std::size_t fan_out() const { return weight.value.cols(); }
};

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero bias.
Dense make_dense(const std::string& name, std::size_t in, std::size_t out, RngState& rng);

/// Stack of dense layers; every hidden layer uses `hidden_act`, the last one
/// is linear unless `output_act` says otherwise.
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::string& name, std::vector<std::size_t> widths, Activation hidden_act,
        Activation output_act, RngState& rng);

    [[nodiscard]] ad::Var forward(ad::Tape& tape, ad::Var x);
    /// Tape-free evaluation on a batch [B, in] -> [B, out].
    [[nodiscard]] Tensor infer(const Tensor& x) const;

    [[nodiscard]] std::size_t in_dim() const { return widths_.front(); }
    [[nodiscard]] std::size_t out_dim() const { return widths_.back(); }
    [[nodiscard]] const std::vector<std::size_t>& widths() const { return widths_; }
    [[nodiscard]] Activation hidden_activation() const { return hidden_act_; }
    [[nodiscard]] Activation output_activation() const { return output_act_; }

    void collect(std::vector<ad::Parameter*>& out);
    void collect(std::vector<const ad::Parameter*>& out) const;
    [[nodiscard]] std::vector<Dense>& layers() { return layers_; }
    [[nodiscard]] const std::vector<Dense>& layers() const { return layers_; }

private:
    std::vector<std::size_t> widths_;
    Activation hidden_act_ = Activation::Tanh;
    Activation output_act_ = Activation::Identity;
    std::vector<Dense> layers_;
};

}  // namespace gmq::nn
