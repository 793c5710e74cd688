#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "neuroloc/autodiff.hpp"

namespace neuroloc {

struct AdamConfig {
    double learning_rate = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Decoupled (AdamW-style) decay rate.
    double weight_decay = 5e-3;
};

struct AdamState {
    AdamConfig config;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    long step = 0;
};

/// One bias-corrected Adam step over `params` using their accumulated
/// gradients (an empty grad counts as zero). Throws NumericError before
/// touching anything if a gradient is not finite.
inline void adam_step(std::span<Parameter* const> params, AdamState& state) {
    for (const Parameter* p : params) {
        if (!p->grad.empty() && !p->grad.same_shape(p->value)) {
            throw DimensionError("adam_step: gradient shape " + p->grad.shape() +
                                 " for parameter " + p->name + " of shape " + p->value.shape());
        }
        if (!p->grad.all_finite()) {
            throw NumericError("adam_step: non-finite gradient for " + p->name);
        }
    }
    if (state.m.empty()) {
        for (const Parameter* p : params) {
            state.m.emplace_back(p->value.rows(), p->value.cols());
            state.v.emplace_back(p->value.rows(), p->value.cols());
        }
    }
    if (state.m.size() != params.size()) {
        throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                             " parameters, got " + std::to_string(params.size()));
    }
    const AdamConfig& c = state.config;
    ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        Matrix& m = state.m[k];
        Matrix& v = state.v[k];
        if (!m.same_shape(p.value)) {
            throw DimensionError("adam_step: moment shape mismatch for " + p.name);
        }
        const bool has_grad = !p.grad.empty();
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = has_grad ? p.grad[i] : 0.0;
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] -= c.learning_rate *
                          (mhat / (std::sqrt(vhat) + c.epsilon) + c.weight_decay * p.value[i]);
        }
    }
}

inline void zero_grads(std::span<Parameter* const> params) {
    for (Parameter* p : params) p->zero_grad();
}

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Builds a scalar loss in the given graph (binding parameters itself).
using ScalarFunction = std::function<ad::Var(ad::Graph&)>;

/// Compares backward() against central differences for every entry of
/// every parameter: max |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// The floor keeps entries whose true gradient is ~0 from reporting pure
/// rounding noise as relative error.
inline GradCheckResult grad_check(const ScalarFunction& f, std::span<Parameter* const> params,
                                  double eps, double floor = 1e-3) {
    if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
    zero_grads(params);
    {
        ad::Graph g;
        g.backward(f(g));
    }
    auto evaluate = [&f] {
        ad::Graph g;
        return f(g).value()[0];
    };
    GradCheckResult result;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + eps;
            const double up = evaluate();
            p->value[i] = saved - eps;
            const double down = evaluate();
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = p->grad[i];
            const double err = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), floor});
            if (err > result.max_relative_error || result.worst_parameter.empty()) {
                result = {err, p->name, i, analytic, numeric};
            }
        }
    }
    return result;
}

}  // namespace neuroloc
