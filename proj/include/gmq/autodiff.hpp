#pragma once

// Minimal reverse-mode differentiation over Tensor-valued nodes.
//
// A Tape records primitive operations in order; backward() walks the record
// in exact reverse, calling each node's local backward rule. Graph topology
// is fixed per model (the same ops are recorded every minibatch), so a fresh
// Tape per step is cheap and no graph optimization is attempted.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gmq/tensor.hpp"

namespace gmq::ad {

/// Trainable tensor plus its accumulated gradient and optimizer state.
struct Parameter {
    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), velocity(value.shape()) {}

    std::string name;
    Tensor value;
    Tensor grad;
    Tensor velocity;

    void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    [[nodiscard]] const Tensor& value() const;
    [[nodiscard]] const std::vector<std::size_t>& shape() const { return value().shape(); }
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf without gradient.
    Var constant(Tensor value);
    /// Leaf whose gradient is kept on the tape (read it with grad()).
    Var input(Tensor value);
    /// Leaf bound to a Parameter; backward() adds into p.grad.
    Var param(Parameter& p);

    /// Records an op. `back` runs during backward() only if the node requires
    /// a gradient and received one.
    Var record(Tensor value, std::span<const Var> inputs, BackwardFn back);

    /// Reverse pass from a scalar node (seed gradient 1).
    void backward(Var loss);

    [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    /// Gradient of a node after backward(); zeros if nothing flowed into it.
    [[nodiscard]] const Tensor& grad(Var v);
    /// Mutable gradient buffer, allocated on first use.
    Tensor& grad_buffer(std::size_t id);
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    /// Node ids in the order the last backward() visited them.
    [[nodiscard]] const std::vector<std::size_t>& visit_order() const noexcept { return visited_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        Parameter* param = nullptr;
        BackwardFn back;
    };
    std::vector<Node> nodes_;
    std::vector<std::size_t> visited_;
};

// ---- primitive ops -------------------------------------------------------

/// [B,n] x [n,m] -> [B,m]
Var matmul(Var x, Var w);
/// [B,m] + [m] broadcast over rows.
Var add_bias(Var x, Var b);
Var tanh(Var x);
/// Elementwise standard normal CDF; derivative is the normal density.
Var normal_cdf(Var x);
/// Column-wise concatenation of rank-2 nodes with equal row counts.
Var concat_cols(std::span<const Var> parts);
/// Columns [begin, begin+count) of a rank-2 node.
Var slice_cols(Var x, std::size_t begin, std::size_t count);
/// [E,w] -> [E*times,w]; output row e*times+i copies input row e.
Var repeat_rows(Var x, std::size_t times);
/// Rows of `table` [n,w] selected by idx -> [idx.size(), w].
Var gather_rows(Var table, std::vector<std::size_t> idx);
Var reshape(Var x, std::vector<std::size_t> shape);
/// Value copy cut off from the graph.
Var detach(Var x);
/// Elementwise clamp to [lo, hi]; zero gradient outside the open interval.
Var clamp(Var x, double lo, double hi);

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var square(Var a);
/// Sum of all elements -> scalar.
Var sum(Var a);
/// Mean of all elements -> scalar.
Var mean(Var a);
/// Row sums of a rank-2 node -> [rows].
Var row_sum(Var a);

/// Mean pinball loss over all elements; `y` and `u` match y_hat's size.
/// Subgradient at y == y_hat is 0.
Var quantile_loss_mean(Var y_hat, const Tensor& y, const Tensor& u);
/// Mean squared error against a constant target.
Var mse_mean(Var pred, const Tensor& target);

/// Lower-triangular factor(s) from raw outputs: diagonal max(raw, 1),
/// off-diagonal tanh(raw), each row divided by its l2 norm.
/// raw_diag [E,d], raw_off [E,d(d-1)/2] -> [E, d*d].
Var constrain_lower(Var raw_diag, Var raw_off);
/// Batched forward substitution. lower holds E row-major d x d factors
/// ([d,d] or [E,d*d]); rhs is [d] or [E,d]; output has rhs's shape.
Var tri_solve(Var lower, Var rhs);
/// Per-factor sum of log diagonal -> [E] (scalar for a single [d,d]).
Var log_det_tri(Var lower);

// ---- gradient checking ---------------------------------------------------

/// Builds a scalar graph from a parameter node.
using ScalarGraph = std::function<Var(Tape&, Var theta)>;

/// Max relative discrepancy between reverse-mode and central-difference
/// gradients over all coordinates of theta; the denominator is floored at
/// 1e-6 so near-zero coordinates are compared absolutely.
double grad_check(const ScalarGraph& f, const Tensor& theta, double eps = 1e-5);

}  // namespace gmq::ad
