#pragma once

// End-to-end pose regressor: encoder -> Hebbian storage -> direction
// encoding -> multi-head attention -> dropout -> position / rotation / grid
// heads, trained with the learnable-weight L1 pose loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "neuroloc/attention.hpp"
#include "neuroloc/autodiff.hpp"
#include "neuroloc/config.hpp"
#include "neuroloc/geometry.hpp"
#include "neuroloc/hebbian.hpp"

namespace neuroloc {

namespace ad {

/// Unit-quaternion log map per row (B x 4 -> B x 3), written as
/// v * atan2(|v|, w) / |v| so it stays smooth at the identity.
inline Var quat_log_rows(Var q) {
    const Matrix& x = q.value();
    if (x.cols() != 4) throw DimensionError("quat_log_rows: expected Bx4, got " + x.shape());
    Matrix out(x.rows(), 3);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double w = x(r, 0);
        const double n = std::sqrt(x(r, 1) * x(r, 1) + x(r, 2) * x(r, 2) + x(r, 3) * x(r, 3));
        const double f = n < 1e-6 ? 1.0 / w - n * n / (3.0 * w * w * w) : std::atan2(n, w) / n;
        for (std::size_t c = 0; c < 3; ++c) out(r, c) = x(r, c + 1) * f;
    }
    const std::size_t iq = q.id();
    return q.graph().record(std::move(out), detail::any_grad({q}), [iq](Graph& gr, std::size_t self) {
        const Matrix& x = gr.value(iq);
        const Matrix& d = gr.grad_slot(self);
        Matrix dx(x.rows(), 4);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const double w = x(r, 0);
            const double v[3] = {x(r, 1), x(r, 2), x(r, 3)};
            const double n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            const double n = std::sqrt(n2);
            double f, df_over_n;  // f(n, w) and (df/dn) / n
            if (n < 1e-6) {
                f = 1.0 / w - n2 / (3.0 * w * w * w);
                df_over_n = -2.0 / (3.0 * w * w * w) + 0.8 * n2 / std::pow(w, 5);
            } else {
                const double theta = std::atan2(n, w);
                f = theta / n;
                df_over_n = (w * n / (n2 + w * w) - theta) / (n2 * n);
            }
            const double dfdw = -1.0 / (n2 + w * w);  // d(theta)/dw / n
            double dot = 0.0;
            for (std::size_t c = 0; c < 3; ++c) dot += d(r, c) * v[c];
            for (std::size_t c = 0; c < 3; ++c) dx(r, c + 1) = d(r, c) * f + dot * df_over_n * v[c];
            dx(r, 0) = dot * dfdw;
        }
        detail::accumulate(gr, iq, dx);
    });
}

/// Normalizes each quaternion row and flips it into the w >= 0 hemisphere.
inline Var canonical_unit_quat_rows(Var q_raw) {
    Var unit = l2_normalize_rows(q_raw);
    const Matrix& u = unit.value();
    Matrix sign(u.rows(), u.cols(), 1.0);
    for (std::size_t r = 0; r < u.rows(); ++r)
        if (u(r, 0) < 0.0)
            for (std::size_t c = 0; c < u.cols(); ++c) sign(r, c) = -1.0;
    return mask(unit, sign);
}

}  // namespace ad

namespace detail {
inline Matrix uniform_matrix(std::size_t rows, std::size_t cols, double a, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-a, a);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = u(rng);
    return m;
}
}  // namespace detail

/// Pluggable feature encoder producing the D-wide global feature.
struct Encoder {
    EncoderKind kind = EncoderKind::Mlp;
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::vector<Parameter> weights;
    std::vector<Parameter> biases;
    Matrix projection;  ///< fixed, random-projection kind only

    Encoder() = default;
    Encoder(EncoderKind kind, std::size_t input_dim, std::size_t output_dim,
            const std::vector<std::size_t>& hidden, std::mt19937_64& rng)
        : kind(kind), input_dim(input_dim), output_dim(output_dim) {
        if (kind == EncoderKind::RandomProjection) {
            std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(input_dim)));
            projection = Matrix(input_dim, output_dim);
            for (double& v : projection.data()) v = n(rng);
            return;
        }
        std::vector<std::size_t> sizes{input_dim};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(output_dim);
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            const double a = std::sqrt(6.0 / static_cast<double>(sizes[l]));
            weights.emplace_back("encoder.w" + std::to_string(l),
                                 detail::uniform_matrix(sizes[l], sizes[l + 1], a, rng));
            biases.emplace_back("encoder.b" + std::to_string(l), Matrix(1, sizes[l + 1]));
        }
    }

    ad::Var forward(ad::Graph& g, ad::Var input) {
        if (input.cols() != input_dim) {
            throw DimensionError("encode: input width " + std::to_string(input.cols()) +
                                 " vs encoder input " + std::to_string(input_dim));
        }
        if (kind == EncoderKind::RandomProjection) {
            return ad::matmul(input, g.constant(projection));
        }
        ad::Var h = input;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            h = ad::add_row(ad::matmul(h, g.param(weights[l])), g.param(biases[l]));
            if (l + 1 < weights.size()) h = ad::relu(h);
        }
        return h;
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.push_back(&weights[l]);
            out.push_back(&biases[l]);
        }
        return out;
    }
};

/// Three linear heads read from the same attention output.
struct RegressionHeads {
    Parameter position_w, position_b;
    Parameter rotation_w, rotation_b;
    Parameter grid_w, grid_b;

    RegressionHeads() = default;
    RegressionHeads(std::size_t dim, std::mt19937_64& rng) {
        const double a = 1.0 / std::sqrt(static_cast<double>(dim));
        position_w = Parameter("heads.position_w", detail::uniform_matrix(dim, 3, a, rng));
        position_b = Parameter("heads.position_b", Matrix(1, 3));
        rotation_w = Parameter("heads.rotation_w", detail::uniform_matrix(dim, 4, a, rng));
        // identity rotation keeps the initial q-raw away from zero norm
        rotation_b = Parameter("heads.rotation_b", Matrix{{1.0, 0.0, 0.0, 0.0}});
        grid_w = Parameter("heads.grid_w", detail::uniform_matrix(dim, 3, a, rng));
        grid_b = Parameter("heads.grid_b", Matrix(1, 3));
    }
};

struct LossWeights {
    Parameter alpha{"loss.alpha", Matrix::scalar(0.0)};
    Parameter beta{"loss.beta", Matrix::scalar(-3.0)};
    Parameter gamma{"loss.gamma", Matrix::scalar(0.0)};
};

enum class Mode { Train, Eval };

struct Prediction {
    ad::Var position;      ///< B x 3
    ad::Var rotation_raw;  ///< B x 4, unnormalized
    ad::Var grid;          ///< B x 3 (invalid when the grid head is disabled)
};

/// Ground truth for one batch, row-aligned with the prediction.
struct PoseTargets {
    Matrix position;  ///< B x 3
    Matrix rotation;  ///< B x 4, canonical unit quaternions
    Matrix grid;      ///< B x 3
};

struct LossBreakdown {
    ad::Var total;
    double position_term = 0.0;
    double rotation_term = 0.0;
    double grid_term = 0.0;
};

/// L = |p - p'|_1 e^-a + a + |log q - log q'|_1 e^-b + b [+ |g - g'|_1 e^-c + c],
/// each L1 term averaged over the batch rows.
inline LossBreakdown pose_loss(ad::Graph& g, const Prediction& pred, const PoseTargets& truth,
                               LossWeights& w, bool use_grid) {
    const double batch = static_cast<double>(pred.position.rows());
    auto l1 = [&](ad::Var a, const Matrix& b) {
        return ad::scale(ad::sum(ad::abs(ad::sub(a, g.constant(b)))), 1.0 / batch);
    };
    auto weighted = [&](ad::Var term, Parameter& s) {
        ad::Var sv = g.param(s);
        return ad::add(ad::hadamard(term, ad::exp(ad::scale(sv, -1.0))), sv);
    };

    Matrix true_log(truth.rotation.rows(), 3);
    for (std::size_t r = 0; r < truth.rotation.rows(); ++r) {
        const auto q = UnitQuaternion::from_components(truth.rotation(r, 0), truth.rotation(r, 1),
                                                       truth.rotation(r, 2), truth.rotation(r, 3))
                           .canonical();
        const Vec3 lq = quat_log(q);
        for (std::size_t c = 0; c < 3; ++c) true_log(r, c) = lq[c];
    }

    ad::Var log_q;
    try {
        log_q = ad::quat_log_rows(ad::canonical_unit_quat_rows(pred.rotation_raw));
    } catch (const NumericError&) {
        throw NumericError("loss: degenerate predicted quaternion");
    }
    ad::Var pos = l1(pred.position, truth.position);
    ad::Var rot = l1(log_q, true_log);
    LossBreakdown out;
    out.position_term = pos.value()[0];
    out.rotation_term = rot.value()[0];
    out.total = ad::add(weighted(pos, w.alpha), weighted(rot, w.beta));
    if (use_grid) {
        ad::Var grid = l1(pred.grid, truth.grid);
        out.grid_term = grid.value()[0];
        out.total = ad::add(out.total, weighted(grid, w.gamma));
    }
    return out;
}

class NeuroLocModel {
public:
    NeuroLocModel() = default;
    explicit NeuroLocModel(const ModelConfig& cfg) : config_(cfg), dropout_rng_(cfg.seed ^ 0xd409u) {
        std::mt19937_64 rng(cfg.seed);
        const std::size_t dim = cfg.feature_dim();
        encoder = Encoder(cfg.encoder, cfg.input_dim, dim, cfg.encoder_hidden, rng);
        memory = HebbianMemory(dim, cfg.eta_raw0, cfg.hebbian_mode);
        readout = ReadoutHead(dim, rng, cfg.readout_gain0);
        direction = DirectionEncoding(cfg.bins, cfg.bin_features);
        attention = AttentionParams(cfg.bins, cfg.bin_features, cfg.heads, rng);
        heads = RegressionHeads(dim, rng);
        loss_weights.alpha.value[0] = cfg.alpha0;
        loss_weights.beta.value[0] = cfg.beta0;
        loss_weights.gamma.value[0] = cfg.gamma0;
    }

    // Not copyable: graphs hold Parameter pointers into this object.
    NeuroLocModel(const NeuroLocModel&) = delete;
    NeuroLocModel& operator=(const NeuroLocModel&) = delete;
    NeuroLocModel(NeuroLocModel&&) = default;
    NeuroLocModel& operator=(NeuroLocModel&&) = default;

    Encoder encoder;
    HebbianMemory memory;
    ReadoutHead readout;
    DirectionEncoding direction;
    AttentionParams attention;
    RegressionHeads heads;
    LossWeights loss_weights;

    const ModelConfig& config() const { return config_; }

    /// Every learnable parameter of the enabled modules, in a fixed order.
    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out = encoder.parameters();
        if (config_.use_hebbian) {
            out.push_back(&memory.eta_raw);
            for (Parameter* p : readout.parameters()) out.push_back(p);
        }
        if (config_.use_direction) out.push_back(&direction.xi_raw);
        for (Parameter* p : attention.parameters()) out.push_back(p);
        out.insert(out.end(), {&heads.position_w, &heads.position_b, &heads.rotation_w,
                               &heads.rotation_b});
        if (config_.use_grid) out.insert(out.end(), {&heads.grid_w, &heads.grid_b});
        out.insert(out.end(), {&loss_weights.alpha, &loss_weights.beta});
        if (config_.use_grid) out.push_back(&loss_weights.gamma);
        return out;
    }

    ad::Var encode(ad::Graph& g, ad::Var input) { return encoder.forward(g, input); }

    /// In Train mode the Hebbian memory is written sample by sample and
    /// dropout is active; Eval mode reads the frozen memory only.
    Prediction forward(ad::Graph& g, ad::Var input, std::span<const double> timestamps, Mode mode) {
        ad::Var x = encode(g, input);
        if (config_.use_hebbian) {
            x = process_batch(g, memory, readout, x, timestamps, mode == Mode::Train);
        }
        if (config_.use_direction) x = direction_encode(g, direction, x);
        ad::Var y = multi_head_forward(g, x, attention);
        if (mode == Mode::Train && config_.dropout > 0.0) y = ad::mask(y, dropout_mask(y.rows(), y.cols()));
        Prediction p;
        p.position = ad::add_row(ad::matmul(y, g.param(heads.position_w)), g.param(heads.position_b));
        p.rotation_raw =
            ad::add_row(ad::matmul(y, g.param(heads.rotation_w)), g.param(heads.rotation_b));
        if (config_.use_grid) {
            p.grid = ad::add_row(ad::matmul(y, g.param(heads.grid_w)), g.param(heads.grid_b));
        }
        return p;
    }

    LossBreakdown loss(ad::Graph& g, const Prediction& pred, const PoseTargets& truth) {
        return pose_loss(g, pred, truth, loss_weights, config_.use_grid);
    }

    /// Clears the memory, then writes the encoded inputs in order without
    /// building gradients. Used before frozen evaluation.
    void consolidate(const Matrix& inputs) {
        memory.reset();
        if (!config_.use_hebbian || inputs.rows() == 0) return;
        ad::Graph g;
        ad::Var features = encode(g, g.constant(inputs));
        replay(memory, features.value());
    }

    /// Inverted dropout; the generator is seeded from the model seed.
    Matrix dropout_mask(std::size_t rows, std::size_t cols) {
        const double keep = 1.0 - config_.dropout;
        std::bernoulli_distribution b(keep);
        Matrix m(rows, cols);
        for (double& v : m.data()) v = b(dropout_rng_) ? 1.0 / keep : 0.0;
        return m;
    }

    void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

private:
    ModelConfig config_;
    std::mt19937_64 dropout_rng_;
};

/// |d f / d input| per input entry, scaled so the largest is 1 (all zeros
/// when the gradient vanishes).
inline Matrix input_saliency(const std::function<ad::Var(ad::Graph&, ad::Var)>& f,
                             const Matrix& input) {
    ad::Graph g;
    ad::Var x = g.input(input);
    g.backward(f(g, x));
    Matrix s = x.grad();
    double mx = 0.0;
    for (double& v : s.data()) mx = std::max(mx, v = std::abs(v));
    if (mx > 0.0) s *= 1.0 / mx;
    return s;
}

/// Sensitivity of |p|_1 + |log q|_1 to each input feature (eval mode).
inline Matrix saliency(NeuroLocModel& model, const Matrix& input, double timestamp = 0.0) {
    const double ts[1] = {timestamp};
    return input_saliency(
        [&](ad::Graph& g, ad::Var x) {
            Prediction p = model.forward(g, x, ts, Mode::Eval);
            ad::Var lq = ad::quat_log_rows(ad::canonical_unit_quat_rows(p.rotation_raw));
            return ad::add(ad::sum(ad::abs(p.position)), ad::sum(ad::abs(lq)));
        },
        input);
}

}  // namespace neuroloc
