#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "neuroloc/neuroloc.hpp"

namespace testing_support {

using neuroloc::Matrix;
using neuroloc::Parameter;
namespace ad = neuroloc::ad;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = u(rng);
    return m;
}

using OpUnderTest = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

/// Gradient check of an arbitrary op: its output is contracted with a fixed
/// random weight matrix so every output entry contributes to the scalar.
inline neuroloc::GradCheckResult check_op(const OpUnderTest& op, const std::vector<Matrix>& inputs,
                                          std::uint64_t seed = 7, double eps = 1e-6) {
    std::vector<Parameter> params;
    for (std::size_t i = 0; i < inputs.size(); ++i) params.emplace_back("in" + std::to_string(i), inputs[i]);
    std::vector<Parameter*> ptrs;
    for (Parameter& p : params) ptrs.push_back(&p);
    Matrix weights;
    {
        ad::Graph g;
        std::vector<ad::Var> vars;
        for (Parameter& p : params) vars.push_back(g.param(p));
        const Matrix& out = op(g, vars).value();
        std::mt19937_64 rng(seed);
        weights = random_matrix(out.rows(), out.cols(), rng);
    }
    auto f = [&](ad::Graph& g) {
        std::vector<ad::Var> vars;
        for (Parameter& p : params) vars.push_back(g.param(p));
        return ad::sum(ad::hadamard(op(g, vars), g.constant(weights)));
    };
    return neuroloc::grad_check(f, ptrs, eps);
}

}  // namespace testing_support
