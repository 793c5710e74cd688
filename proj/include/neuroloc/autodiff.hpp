#pragma once

// Tape-based reverse-mode differentiation over dense matrices.
//
// A Graph records every operation in construction order; Var is a cheap
// handle (graph pointer + node index). Parameters live outside any graph
// and are bound as leaves with Graph::param; backward() adds the leaf
// gradients into Parameter::grad. A graph runs backward at most once.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "neuroloc/errors.hpp"
#include "neuroloc/matrix.hpp"

namespace neuroloc {

/// A learnable tensor with its accumulated gradient.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {}

    void zero_grad() { grad = Matrix(value.rows(), value.cols()); }
};

namespace ad {

class Graph;

/// Handle to a node of a Graph (the differentiable matrix).
class Var {
public:
    Var() = default;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

    const Matrix& value() const;
    /// dLoss/dThis after backward; zeros if the node was not reached.
    Matrix grad() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    std::size_t id() const { return id_; }
    Graph& graph() const { return *graph_; }
    bool valid() const { return graph_ != nullptr; }

private:
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

class Graph {
public:
    using Backward = std::function<void(Graph&, std::size_t)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf that never receives a gradient.
    Var constant(Matrix value) { return push(std::move(value), false, nullptr, nullptr); }
    /// Leaf whose gradient is kept (inputs for saliency, test probes).
    Var input(Matrix value) { return push(std::move(value), true, nullptr, nullptr); }
    /// Leaf bound to a Parameter; backward accumulates into p.grad.
    Var param(Parameter& p) { return push(p.value, true, nullptr, &p); }

    /// Record an op result. `needs_grad` is true when any operand needs one.
    Var record(Matrix value, bool needs_grad, Backward backward) {
        return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : nullptr,
                    nullptr);
    }

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    std::size_t size() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

    /// Gradient slot of a node, zero-materialized on first touch.
    Matrix& grad_slot(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
        return n.grad;
    }
    Matrix grad(std::size_t id) const {
        const Node& n = nodes_[id];
        if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void backward(Var loss) {
        if (&loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
        if (backward_done_) throw ContractError("backward: graph already differentiated");
        const Matrix& lv = value(loss.id());
        if (lv.rows() != 1 || lv.cols() != 1) {
            throw ContractError("backward: loss must be 1x1, got " + lv.shape());
        }
        backward_done_ = true;
        grad_slot(loss.id())(0, 0) = 1.0;
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.empty()) continue;
            if (n.backward) n.backward(*this, i);
            if (n.param != nullptr) {
                if (n.param->grad.empty()) n.param->zero_grad();
                n.param->grad += n.grad;
            }
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        Backward backward;
        Parameter* param = nullptr;
    };

    Var push(Matrix value, bool needs_grad, Backward backward, Parameter* p) {
        nodes_.push_back(Node{std::move(value), Matrix{}, needs_grad, std::move(backward), p});
        return Var(this, nodes_.size() - 1);
    }

    // deque keeps value references stable while the tape grows
    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return graph_->value(id_); }
inline Matrix Var::grad() const { return graph_->grad(id_); }

namespace detail {

inline void require_same_graph(const Var& a, const Var& b, const char* op) {
    if (&a.graph() != &b.graph()) {
        throw ContractError(std::string(op) + ": operands belong to different graphs");
    }
}

inline bool any_grad(std::initializer_list<Var> vs) {
    for (const Var& v : vs)
        if (v.graph().needs_grad(v.id())) return true;
    return false;
}

inline void accumulate(Graph& g, std::size_t id, const Matrix& delta) {
    if (g.needs_grad(id)) g.grad_slot(id) += delta;
}

/// Reduce a gradient computed at the broadcast shape back to a 1x1 operand.
inline Matrix reduce_to(const Matrix& grad, const Matrix& target) {
    if (grad.same_shape(target)) return grad;
    double s = 0.0;
    for (double v : grad.data()) s += v;
    return Matrix::scalar(s);
}

enum class Broadcast { None, LeftScalar, RightScalar };

inline Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
    if (a.same_shape(b)) return Broadcast::None;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::RightScalar;
    if (a.rows() == 1 && a.cols() == 1) return Broadcast::LeftScalar;
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
}

template <typename F>
Matrix zip(const Matrix& a, const Matrix& b, Broadcast bk, F f) {
    const Matrix& shape = bk == Broadcast::LeftScalar ? b : a;
    Matrix out(shape.rows(), shape.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = bk == Broadcast::LeftScalar ? a[0] : a[i];
        const double y = bk == Broadcast::RightScalar ? b[0] : b[i];
        out[i] = f(x, y);
    }
    return out;
}

template <typename F, typename D>
Var unary(Var a, F f, D df_from_x_y) {
    Graph& g = a.graph();
    const Matrix& x = a.value();
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    const std::size_t ia = a.id();
    return g.record(std::move(y), any_grad({a}), [ia, df_from_x_y](Graph& gr, std::size_t self) {
        const Matrix& x = gr.value(ia);
        const Matrix& y = gr.value(self);
        Matrix d = gr.grad(self);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= df_from_x_y(x[i], y[i]);
        accumulate(gr, ia, d);
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
    detail::require_same_graph(a, b, "matmul");
    Graph& g = a.graph();
    Matrix c = neuroloc::matmul(a.value(), b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return g.record(std::move(c), detail::any_grad({a, b}), [ia, ib](Graph& gr, std::size_t self) {
        const Matrix& dc = gr.grad_slot(self);
        if (gr.needs_grad(ia)) gemm_nt_accumulate(dc, gr.value(ib), gr.grad_slot(ia));
        if (gr.needs_grad(ib)) gemm_tn_accumulate(gr.value(ia), dc, gr.grad_slot(ib));
    });
}

inline Var transpose(Var a) {
    Graph& g = a.graph();
    const std::size_t ia = a.id();
    return g.record(a.value().transposed(), detail::any_grad({a}),
                    [ia](Graph& gr, std::size_t self) {
                        detail::accumulate(gr, ia, gr.grad(self).transposed());
                    });
}

/// Solves T X = B for X, reading only the lower triangle of the square T.
inline Var solve_lower_triangular(Var t, Var b) {
    detail::require_same_graph(t, b, "solve_lower_triangular");
    const Matrix& tv = t.value();
    const Matrix& bv = b.value();
    const std::size_t n = tv.rows();
    if (tv.cols() != n || bv.rows() != n) {
        throw DimensionError("solve_lower_triangular: T " + tv.shape() + ", B " + bv.shape());
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (tv(i, i) == 0.0) throw NumericError("solve_lower_triangular: zero pivot");
    }
    const std::size_t c = bv.cols();
    Matrix x = bv;
    for (std::size_t i = 0; i < n; ++i) {
        auto xi = x.row_span(i);
        for (std::size_t j = 0; j < i; ++j) {
            const double tij = tv(i, j);
            if (tij == 0.0) continue;
            auto xj = x.row_span(j);
            for (std::size_t col = 0; col < c; ++col) xi[col] -= tij * xj[col];
        }
        for (double& v : xi) v /= tv(i, i);
    }
    const std::size_t it = t.id(), ib = b.id();
    return t.graph().record(std::move(x), detail::any_grad({t, b}),
                            [it, ib](Graph& gr, std::size_t self) {
        const Matrix& tv = gr.value(it);
        const Matrix& xv = gr.value(self);
        const std::size_t n = tv.rows();
        // dB = T^-T dX (back substitution), dT = -dB X^T on the lower triangle
        Matrix db = gr.grad(self);
        for (std::size_t i = n; i-- > 0;) {
            auto di = db.row_span(i);
            for (double& v : di) v /= tv(i, i);
            for (std::size_t j = 0; j < i; ++j) {
                const double tij = tv(i, j);
                if (tij == 0.0) continue;
                auto dj = db.row_span(j);
                for (std::size_t col = 0; col < di.size(); ++col) dj[col] -= tij * di[col];
            }
        }
        if (gr.needs_grad(it)) {
            Matrix& dt = gr.grad_slot(it);
            for (std::size_t i = 0; i < n; ++i) {
                auto di = db.row_span(i);
                for (std::size_t j = 0; j <= i; ++j) {
                    auto xj = xv.row_span(j);
                    double s = 0.0;
                    for (std::size_t col = 0; col < di.size(); ++col) s += di[col] * xj[col];
                    dt(i, j) -= s;
                }
            }
        }
        detail::accumulate(gr, ib, db);
    });
}

/// Same values, new shape (row-major order preserved).
inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
    const Matrix& x = a.value();
    if (rows * cols != x.size()) {
        throw DimensionError("reshape: " + x.shape() + " to " + Matrix::shape_string(rows, cols));
    }
    const std::size_t ia = a.id();
    return a.graph().record(Matrix(rows, cols, x.storage()), detail::any_grad({a}),
                            [ia](Graph& gr, std::size_t self) {
                                const Matrix& src = gr.value(ia);
                                detail::accumulate(gr, ia,
                                                   Matrix(src.rows(), src.cols(),
                                                          gr.grad(self).storage()));
                            });
}

/// Rows [start, start + count) of a.
inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
    const Matrix& x = a.value();
    if (start + count > x.rows() || count == 0) {
        throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                             std::to_string(start + count) + ") out of range for " + x.shape());
    }
    const std::size_t c = x.cols();
    Matrix out(count, c,
               std::vector<double>(x.storage().begin() + static_cast<std::ptrdiff_t>(start * c),
                                   x.storage().begin() +
                                       static_cast<std::ptrdiff_t>((start + count) * c)));
    const std::size_t ia = a.id();
    return a.graph().record(std::move(out), detail::any_grad({a}),
                            [ia, start, c](Graph& gr, std::size_t self) {
                                if (!gr.needs_grad(ia)) return;
                                Matrix& dst = gr.grad_slot(ia);
                                const Matrix& d = gr.grad_slot(self);
                                for (std::size_t k = 0; k < d.size(); ++k) dst[start * c + k] += d[k];
                            });
}

/// Row i of a as a 1xC matrix.
inline Var row(Var a, std::size_t i) { return slice_rows(a, i, 1); }

/// Stack equal-width rows (each RxC, typically 1xC) vertically.
inline Var stack_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("stack_rows: no operands");
    Graph& g = parts.front().graph();
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    bool need = false;
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        detail::require_same_graph(parts.front(), p, "stack_rows");
        if (p.cols() != cols) {
            throw DimensionError("stack_rows: width " + std::to_string(p.cols()) + " vs " +
                                 std::to_string(cols));
        }
        rows += p.rows();
        need = need || g.needs_grad(p.id());
        ids.push_back(p.id());
    }
    Matrix out(rows, cols);
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const auto& src = p.value().storage();
        std::copy(src.begin(), src.end(), out.storage().begin() + offset);
        offset += src.size();
    }
    return g.record(std::move(out), need, [ids](Graph& gr, std::size_t self) {
        const Matrix& d = gr.grad_slot(self);
        std::size_t off = 0;
        for (std::size_t id : ids) {
            const Matrix& v = gr.value(id);
            if (gr.needs_grad(id)) {
                Matrix& dst = gr.grad_slot(id);
                for (std::size_t k = 0; k < v.size(); ++k) dst[k] += d[off + k];
            }
            off += v.size();
        }
    });
}

inline Var concat_cols(Var a, Var b) {
    detail::require_same_graph(a, b, "concat_cols");
    const Matrix& x = a.value();
    const Matrix& y = b.value();
    if (x.rows() != y.rows()) {
        throw DimensionError("concat_cols: " + x.shape() + " vs " + y.shape());
    }
    Matrix out(x.rows(), x.cols() + y.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) out(r, x.cols() + c) = y(r, c);
    }
    const std::size_t ia = a.id(), ib = b.id(), ca = x.cols(), cb = y.cols();
    return a.graph().record(std::move(out), detail::any_grad({a, b}),
                            [ia, ib, ca, cb](Graph& gr, std::size_t self) {
                                const Matrix& d = gr.grad_slot(self);
                                Matrix da(d.rows(), ca), db(d.rows(), cb);
                                for (std::size_t r = 0; r < d.rows(); ++r) {
                                    for (std::size_t c = 0; c < ca; ++c) da(r, c) = d(r, c);
                                    for (std::size_t c = 0; c < cb; ++c) db(r, c) = d(r, ca + c);
                                }
                                detail::accumulate(gr, ia, da);
                                detail::accumulate(gr, ib, db);
                            });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
    detail::require_same_graph(a, b, "add");
    const auto bk = detail::broadcast_kind(a.value(), b.value(), "add");
    Matrix out = detail::zip(a.value(), b.value(), bk, [](double x, double y) { return x + y; });
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().record(std::move(out), detail::any_grad({a, b}),
                            [ia, ib](Graph& gr, std::size_t self) {
                                const Matrix& d = gr.grad_slot(self);
                                detail::accumulate(gr, ia, detail::reduce_to(d, gr.value(ia)));
                                detail::accumulate(gr, ib, detail::reduce_to(d, gr.value(ib)));
                            });
}

inline Var sub(Var a, Var b) {
    detail::require_same_graph(a, b, "sub");
    const auto bk = detail::broadcast_kind(a.value(), b.value(), "sub");
    Matrix out = detail::zip(a.value(), b.value(), bk, [](double x, double y) { return x - y; });
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().record(std::move(out), detail::any_grad({a, b}),
                            [ia, ib](Graph& gr, std::size_t self) {
                                const Matrix& d = gr.grad_slot(self);
                                detail::accumulate(gr, ia, detail::reduce_to(d, gr.value(ia)));
                                detail::accumulate(gr, ib, detail::reduce_to(d * -1.0, gr.value(ib)));
                            });
}

inline Var hadamard(Var a, Var b) {
    detail::require_same_graph(a, b, "hadamard");
    const auto bk = detail::broadcast_kind(a.value(), b.value(), "hadamard");
    Matrix out = detail::zip(a.value(), b.value(), bk, [](double x, double y) { return x * y; });
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().record(
        std::move(out), detail::any_grad({a, b}), [ia, ib, bk](Graph& gr, std::size_t self) {
            const Matrix& d = gr.grad_slot(self);
            const Matrix& x = gr.value(ia);
            const Matrix& y = gr.value(ib);
            Matrix ga(d.rows(), d.cols()), gb(d.rows(), d.cols());
            for (std::size_t i = 0; i < d.size(); ++i) {
                ga[i] = d[i] * (bk == detail::Broadcast::RightScalar ? y[0] : y[i]);
                gb[i] = d[i] * (bk == detail::Broadcast::LeftScalar ? x[0] : x[i]);
            }
            detail::accumulate(gr, ia, detail::reduce_to(ga, x));
            detail::accumulate(gr, ib, detail::reduce_to(gb, y));
        });
}

inline Var scale(Var a, double s) {
    return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

/// Subgradient at 0 is 0.
inline Var relu(Var a) {
    return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                         [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var a) {
    return detail::unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                         [](double, double y) { return y * (1.0 - y); });
}

inline Var sin(Var a) {
    return detail::unary(a, [](double x) { return std::sin(x); },
                         [](double x, double) { return std::cos(x); });
}

inline Var exp(Var a) {
    return detail::unary(a, [](double x) { return std::exp(x); },
                         [](double, double y) { return y; });
}

/// Subgradient at 0 is 0.
inline Var abs(Var a) {
    return detail::unary(a, [](double x) { return std::abs(x); },
                         [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

/// Elementwise product with a fixed (non-differentiable) matrix, e.g. a
/// dropout mask or sign pattern.
inline Var mask(Var a, const Matrix& m) {
    if (!a.value().same_shape(m)) {
        throw DimensionError("mask: " + a.value().shape() + " vs " + m.shape());
    }
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
    const std::size_t ia = a.id();
    return a.graph().record(std::move(out), detail::any_grad({a}),
                            [ia, m](Graph& gr, std::size_t self) {
                                Matrix d = gr.grad(self);
                                for (std::size_t i = 0; i < d.size(); ++i) d[i] *= m[i];
                                detail::accumulate(gr, ia, d);
                            });
}

/// a (R x C) + r (1 x C) added to every row.
inline Var add_row(Var a, Var r) {
    detail::require_same_graph(a, r, "add_row");
    const Matrix& x = a.value();
    const Matrix& b = r.value();
    if (b.rows() != 1 || b.cols() != x.cols()) {
        throw DimensionError("add_row: " + x.shape() + " + " + b.shape());
    }
    Matrix out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) += b[c];
    const std::size_t ia = a.id(), ir = r.id();
    return a.graph().record(std::move(out), detail::any_grad({a, r}),
                            [ia, ir](Graph& gr, std::size_t self) {
                                const Matrix& d = gr.grad_slot(self);
                                detail::accumulate(gr, ia, d);
                                if (gr.needs_grad(ir)) {
                                    Matrix& dst = gr.grad_slot(ir);
                                    for (std::size_t i = 0; i < d.rows(); ++i)
                                        for (std::size_t c = 0; c < d.cols(); ++c)
                                            dst[c] += d(i, c);
                                }
                            });
}

inline Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    const std::size_t ia = a.id();
    return a.graph().record(Matrix::scalar(s), detail::any_grad({a}),
                            [ia](Graph& gr, std::size_t self) {
                                const double d = gr.grad(self)[0];
                                const Matrix& x = gr.value(ia);
                                detail::accumulate(gr, ia, Matrix(x.rows(), x.cols(), d));
                            });
}

// ---------------------------------------------------------------------------
// Row-wise nonlinear maps

/// Row softmax with max subtraction.
inline Var softmax_rows(Var a) {
    const Matrix& x = a.value();
    if (!x.all_finite()) throw NumericError("softmax_rows: non-finite input");
    Matrix y(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row_span(r);
        auto out = y.row_span(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double z = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) z += (out[c] = std::exp(in[c] - mx));
        for (double& v : out) v /= z;
    }
    const std::size_t ia = a.id();
    return a.graph().record(std::move(y), detail::any_grad({a}), [ia](Graph& gr, std::size_t self) {
        const Matrix& y = gr.value(self);
        const Matrix& d = gr.grad_slot(self);
        Matrix dx(y.rows(), y.cols());
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) dot += d(r, c) * y(r, c);
            for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (d(r, c) - dot);
        }
        detail::accumulate(gr, ia, dx);
    });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row normalization to zero mean / unit population variance, then
/// gain (1xC) and bias (1xC).
inline Var layer_normalize(Var a, Var gain, Var bias) {
    detail::require_same_graph(a, gain, "layer_normalize");
    detail::require_same_graph(a, bias, "layer_normalize");
    const Matrix& x = a.value();
    const std::size_t n = x.cols();
    if (n < 2) throw DimensionError("layer_normalize: need at least 2 columns, got " + x.shape());
    if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
        throw DimensionError("layer_normalize: gain/bias must be 1x" + std::to_string(n));
    }
    Matrix xhat(x.rows(), n);
    std::vector<double> inv_std(x.rows());
    Matrix y(x.rows(), n);
    const Matrix& gv = gain.value();
    const Matrix& bv = bias.value();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < n; ++c) mean += x(r, c);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t c = 0; c < n; ++c) {
            xhat(r, c) = (x(r, c) - mean) * inv_std[r];
            y(r, c) = xhat(r, c) * gv[c] + bv[c];
        }
    }
    const std::size_t ia = a.id(), ig = gain.id(), ib = bias.id();
    return a.graph().record(
        std::move(y), detail::any_grad({a, gain, bias}),
        [ia, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr,
                                                                          std::size_t self) {
            const Matrix& d = gr.grad_slot(self);
            const Matrix& gv = gr.value(ig);
            const std::size_t rows = d.rows(), n = d.cols();
            Matrix dx(rows, n), dg(1, n), db(1, n);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    const double dh = d(r, c) * gv[c];
                    mean_d += dh;
                    mean_dx += dh * xhat(r, c);
                    dg[c] += d(r, c) * xhat(r, c);
                    db[c] += d(r, c);
                }
                mean_d /= static_cast<double>(n);
                mean_dx /= static_cast<double>(n);
                for (std::size_t c = 0; c < n; ++c) {
                    const double dh = d(r, c) * gv[c];
                    dx(r, c) = inv_std[r] * (dh - mean_d - xhat(r, c) * mean_dx);
                }
            }
            detail::accumulate(gr, ia, dx);
            detail::accumulate(gr, ig, dg);
            detail::accumulate(gr, ib, db);
        });
}

/// Each row divided by its L2 norm. Zero rows are rejected.
inline Var l2_normalize_rows(Var a) {
    const Matrix& x = a.value();
    Matrix y(x.rows(), x.cols());
    std::vector<double> norms(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (double v : x.row_span(r)) s += v * v;
        norms[r] = std::sqrt(s);
        if (!(norms[r] > 1e-12)) throw NumericError("l2_normalize_rows: zero-norm row");
        for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = x(r, c) / norms[r];
    }
    const std::size_t ia = a.id();
    return a.graph().record(std::move(y), detail::any_grad({a}),
                            [ia, norms = std::move(norms)](Graph& gr, std::size_t self) {
                                const Matrix& y = gr.value(self);
                                const Matrix& d = gr.grad_slot(self);
                                Matrix dx(y.rows(), y.cols());
                                for (std::size_t r = 0; r < y.rows(); ++r) {
                                    double dot = 0.0;
                                    for (std::size_t c = 0; c < y.cols(); ++c)
                                        dot += d(r, c) * y(r, c);
                                    for (std::size_t c = 0; c < y.cols(); ++c)
                                        dx(r, c) = (d(r, c) - y(r, c) * dot) / norms[r];
                                }
                                detail::accumulate(gr, ia, dx);
                            });
}

}  // namespace ad
}  // namespace neuroloc
