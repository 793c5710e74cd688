#pragma once

// Place-cell style associative storage.
//
// A square memory W is written with an Oja-style Hebbian rule
//     W <- W + eta * (k v - (k k^T) W)
// where the key k is the L2-normalized feature (column) and the value v is
// the raw feature (row). Reading multiplies a feature row by W; the result
// goes through FC -> layer norm -> relu and is added back to the feature.

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "neuroloc/autodiff.hpp"

namespace neuroloc {

enum class HebbianUpdateMode {
    Incremental,  ///< W + eta (k v - k k^T W)
    Literal,      ///< eta (k v - k k^T W), replaces W
};

namespace detail {

/// Shared forward kernel. k is Dx1, v is 1xD.
inline Matrix hebbian_apply(const Matrix& w, const Matrix& k, const Matrix& v, double eta,
                            HebbianUpdateMode mode) {
    const std::size_t d = w.rows();
    std::vector<double> residual(d);  // v - k^T W
    for (std::size_t j = 0; j < d; ++j) residual[j] = v[j];
    for (std::size_t i = 0; i < d; ++i) {
        const double ki = k[i];
        if (ki == 0.0) continue;
        auto wr = w.row_span(i);
        for (std::size_t j = 0; j < d; ++j) residual[j] -= ki * wr[j];
    }
    Matrix out = mode == HebbianUpdateMode::Incremental ? w : Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        const double s = eta * k[i];
        auto orow = out.row_span(i);
        for (std::size_t j = 0; j < d; ++j) orow[j] += s * residual[j];
    }
    return out;
}

inline void check_hebbian_shapes(const Matrix& w, const Matrix& k, const Matrix& v) {
    const std::size_t d = w.rows();
    if (w.cols() != d || k.rows() != d || k.cols() != 1 || v.rows() != 1 || v.cols() != d) {
        throw DimensionError("hebbian_update: W " + w.shape() + ", k " + k.shape() + ", v " +
                             v.shape() + " (want DxD, Dx1, 1xD)");
    }
}

}  // namespace detail

/// Non-differentiable update, used when the memory is replayed or frozen.
inline Matrix hebbian_update(const Matrix& w, const Matrix& k, const Matrix& v, double eta,
                             HebbianUpdateMode mode = HebbianUpdateMode::Incremental) {
    detail::check_hebbian_shapes(w, k, v);
    return detail::hebbian_apply(w, k, v, eta, mode);
}

namespace ad {

/// Differentiable update in W, k, v and eta (1x1). Fused so each step
/// stores one DxD node.
inline Var hebbian_update(Var w, Var k, Var v, Var eta,
                          HebbianUpdateMode mode = HebbianUpdateMode::Incremental) {
    neuroloc::detail::check_hebbian_shapes(w.value(), k.value(), v.value());
    if (eta.rows() != 1 || eta.cols() != 1) throw DimensionError("hebbian_update: eta must be 1x1");
    Matrix out = neuroloc::detail::hebbian_apply(w.value(), k.value(), v.value(), eta.value()[0], mode);
    const std::size_t iw = w.id(), ik = k.id(), iv = v.id(), ie = eta.id();
    return w.graph().record(
        std::move(out), neuroloc::ad::detail::any_grad({w, k, v, eta}),
        [iw, ik, iv, ie, mode](Graph& gr, std::size_t self) {
            const Matrix& g = gr.grad_slot(self);
            const Matrix& wv = gr.value(iw);
            const Matrix& kv = gr.value(ik);
            const Matrix& vv = gr.value(iv);
            const double e = gr.value(ie)[0];
            const std::size_t d = wv.rows();

            std::vector<double> r(d), gk(d, 0.0);  // r = v - k^T W, gk = k^T G
            for (std::size_t j = 0; j < d; ++j) r[j] = vv[j];
            for (std::size_t i = 0; i < d; ++i) {
                const double ki = kv[i];
                auto wr = wv.row_span(i);
                auto grow = g.row_span(i);
                for (std::size_t j = 0; j < d; ++j) {
                    r[j] -= ki * wr[j];
                    gk[j] += ki * grow[j];
                }
            }
            if (gr.needs_grad(iw)) {
                Matrix& dw = gr.grad_slot(iw);
                for (std::size_t i = 0; i < d; ++i) {
                    const double s = e * kv[i];
                    auto dr = dw.row_span(i);
                    auto grow = g.row_span(i);
                    if (mode == HebbianUpdateMode::Incremental) {
                        for (std::size_t j = 0; j < d; ++j) dr[j] += grow[j] - s * gk[j];
                    } else {
                        for (std::size_t j = 0; j < d; ++j) dr[j] -= s * gk[j];
                    }
                }
            }
            if (gr.needs_grad(ie)) {
                double de = 0.0;
                for (std::size_t j = 0; j < d; ++j) de += gk[j] * r[j];
                gr.grad_slot(ie)[0] += de;
            }
            if (gr.needs_grad(iv)) {
                Matrix& dv = gr.grad_slot(iv);
                for (std::size_t j = 0; j < d; ++j) dv[j] += e * gk[j];
            }
            if (gr.needs_grad(ik)) {
                Matrix& dk = gr.grad_slot(ik);
                for (std::size_t i = 0; i < d; ++i) {
                    auto grow = g.row_span(i);
                    auto wr = wv.row_span(i);
                    double s = 0.0;
                    for (std::size_t j = 0; j < d; ++j) s += grow[j] * r[j] - wr[j] * gk[j];
                    dk[i] += e * s;
                }
            }
        });
}

}  // namespace ad

/// Memory matrix W (graph state, not optimized) plus the learnable decay
/// parameter; eta = sigmoid(eta_raw) stays in (0, 1).
class HebbianMemory {
public:
    HebbianMemory() = default;
    explicit HebbianMemory(std::size_t dim, double eta_raw_init = 0.0,
                           HebbianUpdateMode mode = HebbianUpdateMode::Incremental)
        : eta_raw("hebbian.eta_raw", Matrix::scalar(eta_raw_init)), mode(mode), state(dim, dim) {}

    Parameter eta_raw;
    HebbianUpdateMode mode = HebbianUpdateMode::Incremental;
    Matrix state;

    std::size_t dim() const { return state.rows(); }
    double eta() const { return 1.0 / (1.0 + std::exp(-eta_raw.value[0])); }
    void reset() { state.fill(0.0); }
};

/// FC (DxD) -> layer norm -> relu, added residually to the input feature.
struct ReadoutHead {
    Parameter fc_weight;
    Parameter fc_bias;
    Parameter ln_gain;
    Parameter ln_bias;

    ReadoutHead() = default;
    /// Weights ~ U(-a, a) with a = 1/sqrt(D); biases zero. A small layer-norm
    /// gain keeps the memory branch from swamping the residual while the
    /// memory contents are still changing early in training.
    ReadoutHead(std::size_t dim, std::mt19937_64& rng, double gain = 0.1)
        : fc_weight("readout.fc_weight", Matrix(dim, dim)),
          fc_bias("readout.fc_bias", Matrix(1, dim)),
          ln_gain("readout.ln_gain", Matrix(1, dim, gain)),
          ln_bias("readout.ln_bias", Matrix(1, dim)) {
        const double a = 1.0 / std::sqrt(static_cast<double>(dim));
        std::uniform_real_distribution<double> u(-a, a);
        for (double& v : fc_weight.value.data()) v = u(rng);
    }

    std::vector<Parameter*> parameters() { return {&fc_weight, &fc_bias, &ln_gain, &ln_bias}; }
};

struct KeyValue {
    ad::Var key;    ///< Dx1, unit norm
    ad::Var value;  ///< 1xD, raw feature
};

/// Splits a 1xD feature into its index (key) and context (value) roles.
inline KeyValue expand(ad::Var feature) {
    if (feature.rows() != 1) throw DimensionError("expand: feature must be 1xD, got " +
                                                  feature.value().shape());
    try {
        return {ad::transpose(ad::l2_normalize_rows(feature)), feature};
    } catch (const NumericError&) {
        throw NumericError("expand: degenerate key (zero-norm feature)");
    }
}

/// q = x W for a 1xD inactive vector x.
inline ad::Var activate(ad::Var x, ad::Var memory) { return ad::matmul(x, memory); }

/// x_pc = x + relu(layer_norm(q W_fc + b_fc)), row-wise over a batch.
inline ad::Var readout(ad::Graph& g, ReadoutHead& head, ad::Var q, ad::Var x) {
    ad::Var fc = ad::add_row(ad::matmul(q, g.param(head.fc_weight)), g.param(head.fc_bias));
    ad::Var ln = ad::layer_normalize(fc, g.param(head.ln_gain), g.param(head.ln_bias));
    return ad::add(x, ad::relu(ln));
}

inline void require_time_ordered(std::span<const double> timestamps) {
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
        if (timestamps[i] < timestamps[i - 1]) {
            throw ContractError("process_batch: timestamps not ascending at index " +
                                std::to_string(i));
        }
    }
}

/// Runs a time-ordered batch through the memory: each sample reads with the
/// current W, then (when `update`) writes its own key/value. The final W is
/// stored back into `mem.state` as a constant for the next batch.
///
/// The per-sample recurrence is evaluated in factored form. Within a batch
/// every write is rank one, so with K the key rows, W0 the incoming state and
/// R the residual rows r_i = v_i - k_i^T W_i:
///     (I + eta M(K K^T)) R = V - K W0
///     Q = X W0 + eta M(X K^T) R
/// where M keeps the strictly lower triangle (incremental) or the first
/// subdiagonal (literal, where W0 only reaches the first sample).
inline ad::Var process_batch(ad::Graph& g, HebbianMemory& mem, ReadoutHead& head,
                             ad::Var features, std::span<const double> timestamps,
                             bool update = true) {
    const std::size_t batch = features.rows();
    const std::size_t d = mem.dim();
    if (features.cols() != d) {
        throw DimensionError("process_batch: feature width " + std::to_string(features.cols()) +
                             " vs memory dim " + std::to_string(d));
    }
    if (timestamps.size() != batch) {
        throw DimensionError("process_batch: " + std::to_string(timestamps.size()) +
                             " timestamps for batch of " + std::to_string(batch));
    }
    ad::Var w0 = g.constant(mem.state);
    if (!update) return readout(g, head, ad::matmul(features, w0), features);
    require_time_ordered(timestamps);

    const bool literal = mem.mode == HebbianUpdateMode::Literal;
    Matrix lower(batch, batch), first_row(batch, d), identity = Matrix::identity(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t j = 0; j < i; ++j) lower(i, j) = (!literal || j + 1 == i) ? 1.0 : 0.0;
    }
    if (batch > 0) {
        for (std::size_t c = 0; c < d; ++c) first_row(0, c) = 1.0;
    }

    ad::Var keys;
    try {
        keys = ad::l2_normalize_rows(features);
    } catch (const NumericError&) {
        throw NumericError("process_batch: degenerate key (zero-norm feature)");
    }
    ad::Var eta = ad::sigmoid(g.param(mem.eta_raw));
    ad::Var keys_t = ad::transpose(keys);
    ad::Var read0 = ad::matmul(features, w0);
    ad::Var key_read0 = ad::matmul(keys, w0);
    if (literal) {
        read0 = ad::mask(read0, first_row);
        key_read0 = ad::mask(key_read0, first_row);
    }
    ad::Var gram = ad::mask(ad::matmul(keys, keys_t), lower);
    ad::Var system = ad::add(g.constant(identity), ad::hadamard(eta, gram));
    ad::Var residuals = ad::solve_lower_triangular(system, ad::sub(features, key_read0));
    ad::Var cross = ad::mask(ad::matmul(features, keys_t), lower);
    ad::Var q = ad::add(read0, ad::hadamard(eta, ad::matmul(cross, residuals)));

    const Matrix& kv = keys.value();
    const Matrix& rv = residuals.value();
    const double e = eta.value()[0];
    if (literal) {
        if (batch > 0) {
            Matrix next(d, d);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) next(i, j) = e * kv(batch - 1, i) * rv(batch - 1, j);
            mem.state = std::move(next);
        }
    } else {
        Matrix scaled = rv;
        scaled *= e;
        gemm_tn_accumulate(kv, scaled, mem.state);
    }
    return readout(g, head, q, features);
}

/// Writes a sequence of feature rows into the memory without a graph
/// (consolidation pass before frozen evaluation).
inline void replay(HebbianMemory& mem, const Matrix& features) {
    const double eta = mem.eta();
    for (std::size_t i = 0; i < features.rows(); ++i) {
        Matrix v = Matrix::row(features.row_span(i));
        double n = 0.0;
        for (double x : v.data()) n += x * x;
        n = std::sqrt(n);
        if (!(n > 1e-12)) throw NumericError("replay: degenerate key (zero-norm feature)");
        Matrix k(v.cols(), 1);
        for (std::size_t j = 0; j < v.cols(); ++j) k[j] = v[j] / n;
        mem.state = hebbian_update(mem.state, k, v, eta, mem.mode);
    }
}

}  // namespace neuroloc
