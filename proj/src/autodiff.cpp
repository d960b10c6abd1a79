#include "gmq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gmq/error.hpp"
#include "gmq/linalg.hpp"
#include "gmq/normal.hpp"
#include "gmq/simd/kernels.hpp"

namespace gmq::ad {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
    Node n;
    n.value = p.value;
    n.requires_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](const Var& v) { return nodes_[v.id].requires_grad; });
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(Var v) { return grad_buffer(v.id); }

void Tape::backward(Var loss) {
    if (nodes_[loss.id].value.size() != 1) {
        throw ShapeError("backward: loss must be a scalar, got " + nodes_[loss.id].value.shape_string());
    }
    visited_.clear();
    grad_buffer(loss.id)[0] += 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        visited_.push_back(id);
        if (!n.requires_grad || !n.has_grad) continue;
        if (n.back) {
            n.back(*this, id);
        } else if (n.param != nullptr) {
            simd::active().axpy(n.grad.size(), 1.0, n.grad.data(), n.param->grad.data());
        }
    }
}

namespace {

const simd::Kernels& K() { return simd::active(); }

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2, got " + t.shape_string());
}

void require_same_size(const Tensor& a, const Tensor& b, const char* op) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(op) + ": size mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
    }
}

// Dimension d of triangular factors for a batched rhs.
std::size_t tri_dim(const Tensor& lower, const Tensor& rhs, std::size_t& batch) {
    const std::size_t d = rhs.rank() == 0 ? 1 : rhs.shape().back();
    if (d == 0) throw ShapeError("tri_solve: empty system");
    batch = rhs.size() / d;
    if (lower.size() != batch * d * d) {
        throw ShapeError("tri_solve: factor " + lower.shape_string() + " incompatible with rhs " +
                         rhs.shape_string());
    }
    return d;
}

std::size_t infer_tri_dim(std::size_t size_per_factor) {
    const auto d = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(size_per_factor))));
    if (d * d != size_per_factor) throw ShapeError("log_det_tri: factor is not square");
    return d;
}

}  // namespace

Var matmul(Var x, Var w) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    require_rank2(xv, "matmul");
    require_rank2(wv, "matmul");
    const std::size_t b = xv.rows(), n = xv.cols(), m = wv.cols();
    if (wv.rows() != n) {
        throw ShapeError("matmul: " + xv.shape_string() + " x " + wv.shape_string());
    }
    Tensor y({b, m});
    K().gemm_nn(b, m, n, xv.data(), wv.data(), y.data(), false);
    const Var ins[] = {x, w};
    return x.tape->record(std::move(y), ins, [xi = x.id, wi = w.id, b, n, m](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        if (t.requires_grad(xi)) {
            K().gemm_nt_acc(b, n, m, gy.data(), t.value(wi).data(), t.grad_buffer(xi).data());
        }
        if (t.requires_grad(wi)) {
            K().gemm_tn_acc(n, m, b, t.value(xi).data(), gy.data(), t.grad_buffer(wi).data());
        }
    });
}

Var add_bias(Var x, Var b) {
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    require_rank2(xv, "add_bias");
    const std::size_t rows = xv.rows(), cols = xv.cols();
    if (bv.size() != cols) throw ShapeError("add_bias: bias " + bv.shape_string() + " vs " + xv.shape_string());
    Tensor y = xv;
    for (std::size_t r = 0; r < rows; ++r) K().axpy(cols, 1.0, bv.data(), y.data() + r * cols);
    const Var ins[] = {x, b};
    return x.tape->record(std::move(y), ins, [xi = x.id, bi = b.id, rows, cols](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        if (t.requires_grad(xi)) K().axpy(gy.size(), 1.0, gy.data(), t.grad_buffer(xi).data());
        if (t.requires_grad(bi)) {
            Tensor& gb = t.grad_buffer(bi);
            for (std::size_t r = 0; r < rows; ++r) K().axpy(cols, 1.0, gy.data() + r * cols, gb.data());
        }
    });
}

Var tanh(Var x) {
    const Tensor& xv = x.value();
    Tensor y(xv.shape());
    K().tanh_forward(xv.size(), xv.data(), y.data());
    const Var ins[] = {x};
    return x.tape->record(std::move(y), ins, [xi = x.id](Tape& t, std::size_t self) {
        const Tensor& y = t.value(self);
        K().tanh_backward(y.size(), y.data(), t.grad_buffer(self).data(), t.grad_buffer(xi).data());
    });
}

Var normal_cdf(Var x) {
    const Tensor& xv = x.value();
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = std_normal_cdf(xv[i]);
    const Var ins[] = {x};
    return x.tape->record(std::move(y), ins, [xi = x.id](Tape& t, std::size_t self) {
        const Tensor& xv = t.value(xi);
        const Tensor& gy = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += gy[i] * std_normal_pdf(xv[i]);
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    Tape* tape = parts.front().tape;
    const std::size_t rows = parts.front().value().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        require_rank2(p.value(), "concat_cols");
        if (p.value().rows() != rows) throw ShapeError("concat_cols: row count mismatch");
        widths.push_back(p.value().cols());
        total += widths.back();
    }
    Tensor y({rows, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(pv.data() + r * widths[k], widths[k], y.data() + r * total + off);
        }
        off += widths[k];
    }
    std::vector<std::size_t> ids;
    for (const Var& p : parts) ids.push_back(p.id);
    return tape->record(std::move(y), parts, [ids, widths, rows, total](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (t.requires_grad(ids[k])) {
                Tensor& g = t.grad_buffer(ids[k]);
                for (std::size_t r = 0; r < rows; ++r) {
                    K().axpy(widths[k], 1.0, gy.data() + r * total + off, g.data() + r * widths[k]);
                }
            }
            off += widths[k];
        }
    });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
    const Tensor& xv = x.value();
    require_rank2(xv, "slice_cols");
    const std::size_t rows = xv.rows(), cols = xv.cols();
    if (begin + count > cols) throw ShapeError("slice_cols: range exceeds " + xv.shape_string());
    Tensor y({rows, count});
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * cols + begin, count, y.data() + r * count);
    const Var ins[] = {x};
    return x.tape->record(std::move(y), ins, [xi = x.id, rows, cols, begin, count](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xi);
        for (std::size_t r = 0; r < rows; ++r) K().axpy(count, 1.0, gy.data() + r * count, gx.data() + r * cols + begin);
    });
}

Var repeat_rows(Var x, std::size_t times) {
    const Tensor& xv = x.value();
    require_rank2(xv, "repeat_rows");
    const std::size_t e = xv.rows(), w = xv.cols();
    Tensor y({e * times, w});
    for (std::size_t r = 0; r < e; ++r) {
        for (std::size_t i = 0; i < times; ++i) std::copy_n(xv.data() + r * w, w, y.data() + (r * times + i) * w);
    }
    const Var ins[] = {x};
    return x.tape->record(std::move(y), ins, [xi = x.id, e, w, times](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xi);
        for (std::size_t r = 0; r < e; ++r) {
            for (std::size_t i = 0; i < times; ++i) K().axpy(w, 1.0, gy.data() + (r * times + i) * w, gx.data() + r * w);
        }
    });
}

Var gather_rows(Var table, std::vector<std::size_t> idx) {
    const Tensor& tv = table.value();
    require_rank2(tv, "gather_rows");
    const std::size_t w = tv.cols();
    Tensor y({idx.size(), w});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= tv.rows()) throw ShapeError("gather_rows: index out of range");
        std::copy_n(tv.data() + idx[r] * w, w, y.data() + r * w);
    }
    const Var ins[] = {table};
    return table.tape->record(std::move(y), ins, [ti = table.id, idx = std::move(idx), w](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        Tensor& gt = t.grad_buffer(ti);
        for (std::size_t r = 0; r < idx.size(); ++r) K().axpy(w, 1.0, gy.data() + r * w, gt.data() + idx[r] * w);
    });
}

Var reshape(Var x, std::vector<std::size_t> shape) {
    Tensor y = x.value().reshaped(std::move(shape));
    const Var ins[] = {x};
    return x.tape->record(std::move(y), ins, [xi = x.id](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        K().axpy(gy.size(), 1.0, gy.data(), t.grad_buffer(xi).data());
    });
}

Var detach(Var x) { return x.tape->constant(x.value()); }

Var clamp(Var x, double lo, double hi) {
    Tensor y = x.value();
    for (double& v : y.values()) v = std::clamp(v, lo, hi);
    const Var ins[] = {x};
    return x.tape->record(std::move(y), ins, [xi = x.id, lo, hi](Tape& t, std::size_t self) {
        const Tensor& xv = t.value(xi);
        const Tensor& gy = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            if (xv[i] > lo && xv[i] < hi) gx[i] += gy[i];
        }
    });
}

Var add(Var a, Var b) {
    require_same_size(a.value(), b.value(), "add");
    Tensor y = a.value();
    K().axpy(y.size(), 1.0, b.value().data(), y.data());
    const Var ins[] = {a, b};
    return a.tape->record(std::move(y), ins, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        if (t.requires_grad(ai)) K().axpy(gy.size(), 1.0, gy.data(), t.grad_buffer(ai).data());
        if (t.requires_grad(bi)) K().axpy(gy.size(), 1.0, gy.data(), t.grad_buffer(bi).data());
    });
}

Var mul(Var a, Var b) {
    require_same_size(a.value(), b.value(), "mul");
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
    const Var ins[] = {a, b};
    return a.tape->record(std::move(y), ins, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        if (t.requires_grad(ai)) {
            Tensor& g = t.grad_buffer(ai);
            const Tensor& bv = t.value(bi);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bv[i];
        }
        if (t.requires_grad(bi)) {
            Tensor& g = t.grad_buffer(bi);
            const Tensor& av = t.value(ai);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * av[i];
        }
    });
}

Var scale(Var a, double factor) {
    Tensor y = a.value();
    for (double& v : y.values()) v *= factor;
    const Var ins[] = {a};
    return a.tape->record(std::move(y), ins, [ai = a.id, factor](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        K().axpy(gy.size(), factor, gy.data(), t.grad_buffer(ai).data());
    });
}

Var square(Var a) {
    Tensor y = a.value();
    for (double& v : y.values()) v *= v;
    const Var ins[] = {a};
    return a.tape->record(std::move(y), ins, [ai = a.id](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        const Tensor& av = t.value(ai);
        Tensor& g = t.grad_buffer(ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * av[i] * gy[i];
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    const Var ins[] = {a};
    return a.tape->record(Tensor::scalar(s), ins, [ai = a.id](Tape& t, std::size_t self) {
        const double g = t.grad_buffer(self)[0];
        for (double& v : t.grad_buffer(ai).values()) v += g;
    });
}

Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var row_sum(Var a) {
    const Tensor& av = a.value();
    require_rank2(av, "row_sum");
    const std::size_t rows = av.rows(), cols = av.cols();
    Tensor y({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += av(r, c);
        y[r] = s;
    }
    const Var ins[] = {a};
    return a.tape->record(std::move(y), ins, [ai = a.id, rows, cols](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_buffer(self);
        Tensor& g = t.grad_buffer(ai);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += gy[r];
        }
    });
}

Var quantile_loss_mean(Var y_hat, const Tensor& y, const Tensor& u) {
    const Tensor& yh = y_hat.value();
    require_same_size(yh, y, "quantile_loss_mean");
    require_same_size(yh, u, "quantile_loss_mean");
    const std::size_t n = yh.size();
    if (n == 0) throw ShapeError("quantile_loss_mean: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = y[i] - yh[i];
        s += diff > 0.0 ? u[i] * diff : (u[i] - 1.0) * diff;
    }
    const Var ins[] = {y_hat};
    return y_hat.tape->record(Tensor::scalar(s / static_cast<double>(n)), ins,
                              [yi = y_hat.id, y, u, n](Tape& t, std::size_t self) {
                                  const double g = t.grad_buffer(self)[0] / static_cast<double>(n);
                                  const Tensor& yh = t.value(yi);
                                  Tensor& gy = t.grad_buffer(yi);
                                  for (std::size_t i = 0; i < n; ++i) {
                                      if (y[i] > yh[i]) {
                                          gy[i] -= g * u[i];
                                      } else if (y[i] < yh[i]) {
                                          gy[i] += g * (1.0 - u[i]);
                                      }
                                  }
                              });
}

Var mse_mean(Var pred, const Tensor& target) {
    const Tensor& pv = pred.value();
    require_same_size(pv, target, "mse_mean");
    const std::size_t n = pv.size();
    if (n == 0) throw ShapeError("mse_mean: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (pv[i] - target[i]) * (pv[i] - target[i]);
    const Var ins[] = {pred};
    return pred.tape->record(Tensor::scalar(s / static_cast<double>(n)), ins,
                             [pi = pred.id, target, n](Tape& t, std::size_t self) {
                                 const double g = 2.0 * t.grad_buffer(self)[0] / static_cast<double>(n);
                                 const Tensor& pv = t.value(pi);
                                 Tensor& gp = t.grad_buffer(pi);
                                 for (std::size_t i = 0; i < n; ++i) gp[i] += g * (pv[i] - target[i]);
                             });
}

Var constrain_lower(Var raw_diag, Var raw_off) {
    const Tensor& dv = raw_diag.value();
    const Tensor& ov = raw_off.value();
    const std::size_t d = dv.rank() == 2 ? dv.cols() : dv.size();
    if (d == 0) throw DomainError("constrain_lower: d = 0");
    const std::size_t batch = dv.size() / d;
    const std::size_t n_off = d * (d - 1) / 2;
    if (ov.size() != batch * n_off) {
        throw ShapeError("constrain_lower: raw_off " + ov.shape_string() + " inconsistent with d = " +
                         std::to_string(d));
    }
    Tensor lower({batch, d * d});
    std::vector<double> norms(batch * d);
    for (std::size_t e = 0; e < batch; ++e) {
        double* le = lower.data() + e * d * d;
        const double* off = ov.data() + e * n_off;
        for (std::size_t i = 0; i < d; ++i) {
            double* row = le + i * d;
            double sq = 0.0;
            for (std::size_t j = 0; j < i; ++j) {
                row[j] = std::tanh(off[i * (i - 1) / 2 + j]);
                sq += row[j] * row[j];
            }
            row[i] = std::max(dv[e * d + i], 1.0);
            sq += row[i] * row[i];
            const double nrm = std::sqrt(sq);
            norms[e * d + i] = nrm;
            for (std::size_t j = 0; j <= i; ++j) row[j] /= nrm;
        }
    }
    const Var ins[] = {raw_diag, raw_off};
    return raw_diag.tape->record(
        std::move(lower), ins,
        [di = raw_diag.id, oi = raw_off.id, d, batch, n_off, norms = std::move(norms)](Tape& t, std::size_t self) {
            const Tensor& lv = t.value(self);
            const Tensor& gl = t.grad_buffer(self);
            const Tensor& dv = t.value(di);
            const bool want_d = t.requires_grad(di);
            const bool want_o = t.requires_grad(oi);
            Tensor* gd = want_d ? &t.grad_buffer(di) : nullptr;
            Tensor* go = want_o ? &t.grad_buffer(oi) : nullptr;
            std::vector<double> gv(d);
            for (std::size_t e = 0; e < batch; ++e) {
                for (std::size_t i = 0; i < d; ++i) {
                    const double* lrow = lv.data() + e * d * d + i * d;
                    const double* grow = gl.data() + e * d * d + i * d;
                    double proj = 0.0;
                    for (std::size_t j = 0; j <= i; ++j) proj += lrow[j] * grow[j];
                    const double nrm = norms[e * d + i];
                    for (std::size_t j = 0; j <= i; ++j) gv[j] = (grow[j] - lrow[j] * proj) / nrm;
                    if (gd != nullptr && dv[e * d + i] > 1.0) (*gd)[e * d + i] += gv[i];
                    if (go != nullptr) {
                        for (std::size_t j = 0; j < i; ++j) {
                            const double th = lrow[j] * nrm;  // tanh(raw)
                            (*go)[e * n_off + i * (i - 1) / 2 + j] += gv[j] * (1.0 - th * th);
                        }
                    }
                }
            }
        });
}

Var tri_solve(Var lower, Var rhs) {
    const Tensor& lv = lower.value();
    const Tensor& bv = rhs.value();
    std::size_t batch = 0;
    const std::size_t d = tri_dim(lv, bv, batch);
    Tensor z(bv.shape());
    for (std::size_t e = 0; e < batch; ++e) {
        const std::span<const double> le(lv.data() + e * d * d, d * d);
        tri::require_nonsingular(d, le);
        tri::solve_lower(d, le, {bv.data() + e * d, d}, {z.data() + e * d, d});
    }
    const Var ins[] = {lower, rhs};
    return lower.tape->record(std::move(z), ins, [li = lower.id, bi = rhs.id, d, batch](Tape& t, std::size_t self) {
        const Tensor& lv = t.value(li);
        const Tensor& zv = t.value(self);
        const Tensor& gz = t.grad_buffer(self);
        const bool want_l = t.requires_grad(li);
        const bool want_b = t.requires_grad(bi);
        std::vector<double> gb(d);
        for (std::size_t e = 0; e < batch; ++e) {
            const std::span<const double> le(lv.data() + e * d * d, d * d);
            tri::solve_lower_transposed(d, le, {gz.data() + e * d, d}, gb);
            if (want_b) K().axpy(d, 1.0, gb.data(), t.grad_buffer(bi).data() + e * d);
            if (want_l) {
                double* gl = t.grad_buffer(li).data() + e * d * d;
                const double* z = zv.data() + e * d;
                for (std::size_t i = 0; i < d; ++i) {
                    for (std::size_t j = 0; j <= i; ++j) gl[i * d + j] -= gb[i] * z[j];
                }
            }
        }
    });
}

Var log_det_tri(Var lower) {
    const Tensor& lv = lower.value();
    std::size_t batch = 1, per = lv.size();
    if (lv.rank() == 2 && lv.shape()[0] != lv.shape()[1]) {
        batch = lv.shape()[0];
        per = lv.shape()[1];
    }
    const std::size_t d = infer_tri_dim(per);
    Tensor out = (batch == 1 && lv.rank() == 2 && lv.shape()[0] == lv.shape()[1]) ? Tensor::scalar(0.0)
                                                                                   : Tensor({batch});
    for (std::size_t e = 0; e < batch; ++e) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double v = lv[e * d * d + i * d + i];
            if (!(v > 0.0)) throw DomainError("log_det_tri: non-positive diagonal");
            s += std::log(v);
        }
        out[e] = s;
    }
    const Var ins[] = {lower};
    return lower.tape->record(std::move(out), ins, [li = lower.id, d, batch](Tape& t, std::size_t self) {
        const Tensor& lv = t.value(li);
        const Tensor& g = t.grad_buffer(self);
        Tensor& gl = t.grad_buffer(li);
        for (std::size_t e = 0; e < batch; ++e) {
            for (std::size_t i = 0; i < d; ++i) {
                const std::size_t k = e * d * d + i * d + i;
                gl[k] += g[e] / lv[k];
            }
        }
    });
}

double grad_check(const ScalarGraph& f, const Tensor& theta, double eps) {
    Tensor analytic;
    {
        Tape tape;
        const Var th = tape.input(theta);
        const Var out = f(tape, th);
        tape.backward(out);
        analytic = tape.grad(th);
    }
    auto eval = [&](const Tensor& point) {
        Tape tape;
        return f(tape, tape.input(point)).value()[0];
    };
    double worst = 0.0;
    Tensor probe = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + eps;
        const double up = eval(probe);
        probe[i] = theta[i] - eps;
        const double down = eval(probe);
        probe[i] = theta[i];
        const double numeric = (up - down) / (2.0 * eps);
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-6});
        worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace gmq::ad
