#include "gmq/nn.hpp"

#include <cmath>

#include "gmq/error.hpp"
#include "gmq/simd/kernels.hpp"

namespace gmq::nn {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "identity") return Activation::Identity;
    throw FormatError("unknown activation '" + s + "'");
}

Dense make_dense(const std::string& name, std::size_t in, std::size_t out, RngState& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w({in, out});
    for (double& v : w.values()) v = rng.uniform(-limit, limit);
    return Dense{ad::Parameter(name + ".weight", std::move(w)), ad::Parameter(name + ".bias", Tensor({out}))};
}

Mlp::Mlp(const std::string& name, std::vector<std::size_t> widths, Activation hidden_act,
         Activation output_act, RngState& rng)
    : widths_(std::move(widths)), hidden_act_(hidden_act), output_act_(output_act) {
    if (widths_.size() < 2) throw ShapeError("Mlp needs at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
        layers_.push_back(make_dense(name + ".l" + std::to_string(i), widths_[i], widths_[i + 1], rng));
    }
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x) {
    ad::Var h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = ad::add_bias(ad::matmul(h, tape.param(layers_[i].weight)), tape.param(layers_[i].bias));
        const Activation act = i + 1 < layers_.size() ? hidden_act_ : output_act_;
        if (act == Activation::Tanh) h = ad::tanh(h);
    }
    return h;
}

Tensor Mlp::infer(const Tensor& x) const {
    const auto& k = simd::active();
    if (x.cols() != in_dim()) {
        throw ShapeError("Mlp::infer: input " + x.shape_string() + " vs in_dim " + std::to_string(in_dim()));
    }
    const std::size_t batch = x.rows();
    Tensor h = x.reshaped({batch, x.cols()});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Dense& layer = layers_[i];
        const std::size_t out = layer.fan_out();
        Tensor next({batch, out});
        k.gemm_nn(batch, out, layer.fan_in(), h.data(), layer.weight.value.data(), next.data(), false);
        for (std::size_t r = 0; r < batch; ++r) k.axpy(out, 1.0, layer.bias.value.data(), next.data() + r * out);
        const Activation act = i + 1 < layers_.size() ? hidden_act_ : output_act_;
        if (act == Activation::Tanh) k.tanh_forward(next.size(), next.data(), next.data());
        h = std::move(next);
    }
    return h;
}

void Mlp::collect(std::vector<ad::Parameter*>& out) {
    for (Dense& l : layers_) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
}

void Mlp::collect(std::vector<const ad::Parameter*>& out) const {
    for (const Dense& l : layers_) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
}

}  // namespace gmq::nn
