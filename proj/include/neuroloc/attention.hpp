#pragma once

// Head-direction encoding and two-head scaled-dot-product attention.
//
// A D-wide feature is viewed as `bins` direction tokens of `token_dim`
// features each (8 x 256 = 2048 by default). Token j (1-based) gets the
// additive offset xi_j * sin(d_j / 2) with d_j = 2 pi j / bins and
// xi = sigmoid(xi_raw) in (0, 1). Attention then mixes tokens:
//     h_i = softmax((T W_theta_i)(T W_psi_i)^T / sqrt(head_dim)) (T W_g_i)
//     y   = flatten(concat(h_1, ..., h_H) W_O) + x

#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "neuroloc/autodiff.hpp"

namespace neuroloc {

struct DirectionEncoding {
    std::size_t bins = 8;
    std::size_t token_dim = 256;
    Parameter xi_raw;

    DirectionEncoding() = default;
    DirectionEncoding(std::size_t bins, std::size_t token_dim, double xi_raw_init = 0.0)
        : bins(bins),
          token_dim(token_dim),
          xi_raw("direction.xi_raw", Matrix(bins, token_dim, xi_raw_init)) {}

    std::size_t dim() const { return bins * token_dim; }

    /// Bin angle d_j = 2 pi j / bins for j = 1..bins (right bin edge).
    double bin_angle(std::size_t j) const {
        return 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(bins);
    }

    /// bins x token_dim matrix whose row j-1 is sin(d_j / 2).
    Matrix sin_half_angles() const {
        Matrix s(bins, token_dim);
        for (std::size_t r = 0; r < bins; ++r) {
            const double v = std::sin(bin_angle(r + 1) / 2.0);
            for (std::size_t c = 0; c < token_dim; ++c) s(r, c) = v;
        }
        return s;
    }

    std::vector<Parameter*> parameters() { return {&xi_raw}; }
};

/// x_hd = x_pc + xi * sin(d/2), broadcast over the rows of a B x D batch.
inline ad::Var direction_encode(ad::Graph& g, DirectionEncoding& enc, ad::Var x_pc) {
    if (x_pc.cols() != enc.dim()) {
        throw DimensionError("direction_encode: width " + std::to_string(x_pc.cols()) +
                             " vs encoding " + std::to_string(enc.bins) + "x" +
                             std::to_string(enc.token_dim));
    }
    ad::Var xi = ad::sigmoid(g.param(enc.xi_raw));
    ad::Var offsets = ad::mask(xi, enc.sin_half_angles());
    return ad::add_row(x_pc, ad::reshape(offsets, 1, enc.dim()));
}

struct AttentionParams {
    std::size_t tokens = 8;
    std::size_t token_dim = 256;
    std::size_t heads = 2;
    std::vector<Parameter> w_theta;
    std::vector<Parameter> w_psi;
    std::vector<Parameter> w_g;
    Parameter w_o;

    AttentionParams() = default;

    /// Xavier-uniform initialization of every projection.
    AttentionParams(std::size_t tokens, std::size_t token_dim, std::size_t heads,
                    std::mt19937_64& rng)
        : tokens(tokens), token_dim(token_dim), heads(heads) {
        if (heads == 0 || token_dim % heads != 0) {
            throw DimensionError("AttentionParams: token_dim " + std::to_string(token_dim) +
                                 " not divisible by " + std::to_string(heads) + " heads");
        }
        const std::size_t hd = head_dim();
        auto xavier = [&rng](std::size_t fan_in, std::size_t fan_out) {
            const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            std::uniform_real_distribution<double> u(-a, a);
            Matrix m(fan_in, fan_out);
            for (double& v : m.data()) v = u(rng);
            return m;
        };
        for (std::size_t h = 0; h < heads; ++h) {
            const std::string tag = std::to_string(h);
            w_theta.emplace_back("attention.w_theta." + tag, xavier(token_dim, hd));
            w_psi.emplace_back("attention.w_psi." + tag, xavier(token_dim, hd));
            w_g.emplace_back("attention.w_g." + tag, xavier(token_dim, hd));
        }
        w_o = Parameter("attention.w_o", xavier(heads * hd, token_dim));
    }

    std::size_t head_dim() const { return token_dim / heads; }
    std::size_t dim() const { return tokens * token_dim; }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        for (std::size_t h = 0; h < heads; ++h) {
            out.push_back(&w_theta[h]);
            out.push_back(&w_psi[h]);
            out.push_back(&w_g[h]);
        }
        out.push_back(&w_o);
        return out;
    }
};

namespace detail {
inline void check_head(const AttentionParams& p, std::size_t head) {
    if (head >= p.heads) {
        throw DimensionError("attention: head " + std::to_string(head) + " of " +
                             std::to_string(p.heads));
    }
}
}  // namespace detail

/// S = (T W_theta)(T W_psi)^T / sqrt(head_dim) for a tokens x token_dim block.
inline ad::Var scaled_scores(ad::Graph& g, ad::Var tokens, AttentionParams& p, std::size_t head) {
    detail::check_head(p, head);
    ad::Var theta = ad::matmul(tokens, g.param(p.w_theta[head]));
    ad::Var psi = ad::matmul(tokens, g.param(p.w_psi[head]));
    return ad::scale(ad::matmul(theta, ad::transpose(psi)),
                     1.0 / std::sqrt(static_cast<double>(p.head_dim())));
}

inline ad::Var attention_weights(ad::Graph& g, ad::Var tokens, AttentionParams& p,
                                 std::size_t head) {
    return ad::softmax_rows(scaled_scores(g, tokens, p, head));
}

/// h_i = softmax(S) (T W_g).
inline ad::Var attention_head(ad::Graph& g, ad::Var tokens, AttentionParams& p, std::size_t head) {
    return ad::matmul(attention_weights(g, tokens, p, head),
                      ad::matmul(tokens, g.param(p.w_g[head])));
}

/// concat_i(h_i) W_O + T for one tokens x token_dim block.
inline ad::Var attend_tokens(ad::Graph& g, ad::Var tokens, AttentionParams& p) {
    ad::Var cat = attention_head(g, tokens, p, 0);
    for (std::size_t h = 1; h < p.heads; ++h) cat = ad::concat_cols(cat, attention_head(g, tokens, p, h));
    return ad::add(ad::matmul(cat, g.param(p.w_o)), tokens);
}

/// Row-wise attention over a B x D batch: y = flatten(H) + x_hd.
inline ad::Var multi_head_forward(ad::Graph& g, ad::Var x_hd, AttentionParams& p) {
    if (x_hd.cols() != p.dim()) {
        throw DimensionError("multi_head_forward: width " + std::to_string(x_hd.cols()) +
                             " vs " + std::to_string(p.tokens) + "x" + std::to_string(p.token_dim));
    }
    const std::size_t batch = x_hd.rows();
    ad::Var all_tokens = ad::reshape(x_hd, batch * p.tokens, p.token_dim);
    std::vector<ad::Var> mixed;
    mixed.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        mixed.push_back(attend_tokens(g, ad::slice_rows(all_tokens, b * p.tokens, p.tokens), p));
    }
    return ad::reshape(ad::stack_rows(mixed), batch, p.dim());
}

}  // namespace neuroloc
