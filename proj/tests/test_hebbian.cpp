#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "neuroloc/neuroloc.hpp"
#include "test_support.hpp"

using namespace neuroloc;
using testing_support::random_matrix;

namespace {

Matrix unit_column(std::size_t d, std::size_t i) {
    Matrix k(d, 1);
    k[i] = 1.0;
    return k;
}

/// k^T W for a D x 1 key.
Matrix read_key(const Matrix& w, const Matrix& k) { return matmul(k.transposed(), w); }

double max_abs(const Matrix& m) {
    double r = 0.0;
    for (double v : m.data()) r = std::max(r, std::abs(v));
    return r;
}

Matrix l2_row(const Matrix& row) {
    double n = 0.0;
    for (double v : row.data()) n += v * v;
    Matrix out = row;
    out *= 1.0 / std::sqrt(n);
    return out;
}

/// Per-sample reference: read with the current W, then write, all with
/// dense matrices (no factoring, no autodiff).
Matrix sequential_activations(Matrix w, const Matrix& x, double eta, HebbianUpdateMode mode, Matrix* final_w) {
    Matrix q(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const Matrix xi = Matrix::row(x.row_span(i));
        const Matrix qi = matmul(xi, w);
        for (std::size_t c = 0; c < x.cols(); ++c) q(i, c) = qi[c];
        w = hebbian_update(w, l2_row(xi).transposed(), xi, eta, mode);
    }
    if (final_w != nullptr) *final_w = w;
    return q;
}

}  // namespace

TEST(Expand, Examples) {
    ad::Graph g;
    const KeyValue kv = expand(g.constant(Matrix{{3, 4}}));
    EXPECT_NEAR(kv.key.value()(0, 0), 0.6, 1e-15);
    EXPECT_NEAR(kv.key.value()(1, 0), 0.8, 1e-15);
    EXPECT_EQ(kv.key.rows(), 2u);
    EXPECT_EQ(kv.key.cols(), 1u);
    EXPECT_EQ(kv.value.value(), (Matrix{{3, 4}}));

    const KeyValue e1 = expand(g.constant(Matrix{{1, 0, 0}}));
    EXPECT_EQ(e1.key.value(), unit_column(3, 0));
    EXPECT_EQ(e1.value.value(), (Matrix{{1, 0, 0}}));

    EXPECT_THROW(expand(g.constant(Matrix(1, 3))), NumericError);
}

TEST(HebbianUpdate, SingleStepClosedForm) {
    std::mt19937_64 rng(31);
    const std::size_t d = 6;
    Matrix k = random_matrix(d, 1, rng);
    k *= 1.0 / std::sqrt(matmul(k.transposed(), k)[0]);
    const Matrix v = random_matrix(1, d, rng);
    const Matrix w = hebbian_update(Matrix(d, d), k, v, 0.5);
    Matrix expected = v;
    expected *= 0.5;
    EXPECT_LT(max_abs_diff(read_key(w, k), expected), 1e-15);
}

TEST(HebbianUpdate, VanishingRate) {
    std::mt19937_64 rng(32);
    const Matrix w = random_matrix(4, 4, rng);
    const Matrix k = unit_column(4, 2), v = random_matrix(1, 4, rng);
    EXPECT_EQ(hebbian_update(w, k, v, 0.0, HebbianUpdateMode::Incremental), w);
    EXPECT_EQ(hebbian_update(w, k, v, 0.0, HebbianUpdateMode::Literal), Matrix(4, 4));
}

TEST(HebbianUpdate, LiteralModeReplacesMemory) {
    std::mt19937_64 rng(33);
    const Matrix w = random_matrix(4, 4, rng), v = random_matrix(1, 4, rng);
    const Matrix k = unit_column(4, 1);
    const Matrix inc = hebbian_update(w, k, v, 0.3, HebbianUpdateMode::Incremental);
    const Matrix lit = hebbian_update(w, k, v, 0.3, HebbianUpdateMode::Literal);
    EXPECT_LT(max_abs_diff(inc - w, lit), 1e-15);
}

TEST(HebbianUpdate, GeometricConvergence) {
    std::mt19937_64 rng(34);
    const std::size_t d = 5;
    Matrix k = random_matrix(d, 1, rng);
    k *= 1.0 / std::sqrt(matmul(k.transposed(), k)[0]);
    const Matrix v = random_matrix(1, d, rng);
    for (double eta : {0.1, 0.5, 0.9}) {
        Matrix w(d, d);
        for (int m = 1; m <= 30; ++m) {
            w = hebbian_update(w, k, v, eta);
            Matrix expected = v;
            expected *= 1.0 - std::pow(1.0 - eta, m);
            EXPECT_LT(max_abs(read_key(w, k) - expected), 1e-9) << "eta " << eta << " m " << m;
        }
    }
}

TEST(HebbianUpdate, OrthogonalKeysDoNotInterfere) {
    std::mt19937_64 rng(35);
    const std::size_t d = 8;
    // two orthonormal keys via Gram-Schmidt
    Matrix k1 = random_matrix(d, 1, rng), k2 = random_matrix(d, 1, rng);
    k1 *= 1.0 / std::sqrt(matmul(k1.transposed(), k1)[0]);
    const double proj = matmul(k1.transposed(), k2)[0];
    for (std::size_t i = 0; i < d; ++i) k2[i] -= proj * k1[i];
    k2 *= 1.0 / std::sqrt(matmul(k2.transposed(), k2)[0]);
    const Matrix v1 = random_matrix(1, d, rng), v2 = random_matrix(1, d, rng);

    Matrix w = hebbian_update(Matrix(d, d), k1, v1, 0.5);
    const Matrix before = read_key(w, k1);
    w = hebbian_update(w, k2, v2, 0.5);
    EXPECT_LT(max_abs(read_key(w, k1) - before), 1e-9);
}

TEST(HebbianUpdate, ShapeErrors) {
    EXPECT_THROW(hebbian_update(Matrix(3, 3), Matrix(3, 1), Matrix(1, 4), 0.5), DimensionError);
    EXPECT_THROW(hebbian_update(Matrix(3, 4), Matrix(3, 1), Matrix(1, 3), 0.5), DimensionError);
    EXPECT_THROW(hebbian_update(Matrix(3, 3), Matrix(1, 3), Matrix(1, 3), 0.5), DimensionError);
}

TEST(HebbianUpdate, DifferentiableOpGradient) {
    std::mt19937_64 rng(36);
    const std::size_t d = 5;
    for (HebbianUpdateMode mode : {HebbianUpdateMode::Incremental, HebbianUpdateMode::Literal}) {
        Parameter w("w", random_matrix(d, d, rng)), k("k", random_matrix(d, 1, rng)),
            v("v", random_matrix(1, d, rng)), eta("eta", Matrix{{0.37}});
        const Matrix probe = random_matrix(d, d, rng);
        Parameter* ps[] = {&w, &k, &v, &eta};
        auto f = [&](ad::Graph& g) {
            ad::Var out = ad::hebbian_update(g.param(w), g.param(k), g.param(v), g.param(eta), mode);
            return ad::sum(ad::hadamard(out, g.constant(probe)));
        };
        EXPECT_LT(grad_check(f, ps, 1e-6).max_relative_error, 1e-7);
    }
}

TEST(Activate, Examples) {
    std::mt19937_64 rng(37);
    const Matrix x = random_matrix(1, 4, rng);
    ad::Graph g;
    EXPECT_EQ(activate(g.constant(x), g.constant(Matrix::identity(4))).value(), x);
    EXPECT_EQ(activate(g.constant(x), g.constant(Matrix(4, 4))).value(), Matrix(1, 4));

    const Matrix w = hebbian_update(Matrix(4, 4), l2_row(x).transposed(), x, 0.3);
    const Matrix q = activate(g.constant(x), g.constant(w)).value();
    double n = 0.0;
    for (double v : x.data()) n += v * v;
    Matrix expected = x;
    expected *= std::sqrt(n) * 0.3;
    EXPECT_LT(max_abs_diff(q, expected), 1e-14);
}

TEST(Readout, ResidualIdentities) {
    std::mt19937_64 rng(38);
    const std::size_t d = 6;
    ReadoutHead head(d, rng);
    const Matrix x = random_matrix(2, d, rng);
    {
        ad::Graph g;
        EXPECT_EQ(readout(g, head, g.constant(Matrix(2, d)), g.constant(x)).value(), x);
    }
    head.fc_weight.value = Matrix(d, d);
    {
        ad::Graph g;
        EXPECT_EQ(readout(g, head, g.constant(random_matrix(2, d, rng)), g.constant(x)).value(), x);
    }
}

TEST(Readout, MatchesComposedOracle) {
    std::mt19937_64 rng(39);
    const std::size_t d = 4;
    ReadoutHead head(d, rng);
    head.fc_bias.value = random_matrix(1, d, rng);
    head.ln_gain.value = random_matrix(1, d, rng, 0.5, 1.5);
    head.ln_bias.value = random_matrix(1, d, rng);
    const Matrix q = random_matrix(1, d, rng), x = random_matrix(1, d, rng);
    ad::Graph g;
    const Matrix got = readout(g, head, g.constant(q), g.constant(x)).value();

    Matrix fc = matmul(q, head.fc_weight.value);
    fc += head.fc_bias.value;
    double mean = 0.0, var = 0.0;
    for (double v : fc.data()) mean += v / d;
    for (double v : fc.data()) var += (v - mean) * (v - mean) / d;
    for (std::size_t c = 0; c < d; ++c) {
        const double ln = (fc[c] - mean) / std::sqrt(var + ad::kLayerNormEps) * head.ln_gain.value[c] +
                          head.ln_bias.value[c];
        EXPECT_NEAR(got[c], x[c] + std::max(0.0, ln), 1e-14);
    }
}

TEST(ProcessBatch, FirstSampleFromEmptyMemoryPassesThrough) {
    std::mt19937_64 rng(40);
    HebbianMemory mem(6);
    ReadoutHead head(6, rng);
    const Matrix x = random_matrix(1, 6, rng);
    ad::Graph g;
    const double ts[] = {0.0};
    EXPECT_EQ(process_batch(g, mem, head, g.constant(x), ts).value(), x);
}

TEST(ProcessBatch, RepeatedSampleActivatesMoreStrongly) {
    std::mt19937_64 rng(41);
    const std::size_t d = 6;
    HebbianMemory mem(d);
    const Matrix x = random_matrix(1, d, rng);
    Matrix both(3, d);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < d; ++c) both(r, c) = x[c];
    const Matrix q = sequential_activations(Matrix(d, d), both, mem.eta(), mem.mode, nullptr);
    auto row_norm = [&](std::size_t r) {
        double s = 0.0;
        for (double v : q.row_span(r)) s += v * v;
        return std::sqrt(s);
    };
    EXPECT_GT(row_norm(1), row_norm(0));
    EXPECT_GT(row_norm(2), row_norm(1));
}

TEST(ProcessBatch, MatchesSequentialOracle) {
    std::mt19937_64 rng(42);
    const std::size_t d = 7, b = 5;
    for (HebbianUpdateMode mode : {HebbianUpdateMode::Incremental, HebbianUpdateMode::Literal}) {
        HebbianMemory mem(d, 0.4, mode);
        ReadoutHead head(d, rng);
        head.ln_gain.value = random_matrix(1, d, rng, 0.5, 1.5);
        head.ln_bias.value = random_matrix(1, d, rng, 0.1, 0.5);
        mem.state = random_matrix(d, d, rng, -0.2, 0.2);
        const Matrix w0 = mem.state;
        const Matrix x = random_matrix(b, d, rng);
        const std::vector<double> ts{0.0, 0.1, 0.2, 0.3, 0.4};

        Matrix oracle_w;
        const Matrix q = sequential_activations(w0, x, mem.eta(), mode, &oracle_w);
        ad::Graph g1;
        const Matrix expected = readout(g1, head, g1.constant(q), g1.constant(x)).value();

        ad::Graph g2;
        const Matrix got = process_batch(g2, mem, head, g2.constant(x), ts).value();
        EXPECT_LT(max_abs_diff(got, expected), 1e-12);
        EXPECT_LT(max_abs_diff(mem.state, oracle_w), 1e-12);
    }
}

TEST(ProcessBatch, GradientsMatchPerSampleComposite) {
    std::mt19937_64 rng(43);
    const std::size_t d = 6, b = 4;
    for (HebbianUpdateMode mode : {HebbianUpdateMode::Incremental, HebbianUpdateMode::Literal}) {
        HebbianMemory mem(d, -0.3, mode);
        ReadoutHead head(d, rng);
        const Matrix w0 = random_matrix(d, d, rng, -0.2, 0.2);
        const Matrix x = random_matrix(b, d, rng), probe = random_matrix(b, d, rng);
        const std::vector<double> ts{1, 2, 3, 4};

        mem.state = w0;
        ad::Graph g;
        ad::Var in = g.input(x);
        g.backward(ad::sum(ad::hadamard(process_batch(g, mem, head, in, ts), g.constant(probe))));
        const Matrix dx = in.grad();
        const Matrix deta = mem.eta_raw.grad;
        mem.eta_raw.zero_grad();

        // same recurrence written sample by sample with the fused update op
        ad::Graph h;
        ad::Var in2 = h.input(x);
        ad::Var w = h.constant(w0);
        ad::Var eta = ad::sigmoid(h.param(mem.eta_raw));
        std::vector<ad::Var> acts;
        for (std::size_t i = 0; i < b; ++i) {
            ad::Var xi = ad::row(in2, i);
            acts.push_back(activate(xi, w));
            const KeyValue kv = expand(xi);
            w = ad::hebbian_update(w, kv.key, kv.value, eta, mode);
        }
        ad::Var out = readout(h, head, ad::stack_rows(acts), in2);
        h.backward(ad::sum(ad::hadamard(out, h.constant(probe))));
        EXPECT_LT(max_abs_diff(dx, in2.grad()), 1e-12);
        EXPECT_LT(max_abs_diff(deta, mem.eta_raw.grad), 1e-12);
    }
}

TEST(ProcessBatch, FiniteDifferenceGradient) {
    std::mt19937_64 rng(44);
    const std::size_t d = 16, b = 4;
    HebbianMemory mem(d, 0.2);
    ReadoutHead head(d, rng);
    Parameter x("x", random_matrix(b, d, rng));
    const Matrix w0 = random_matrix(d, d, rng, -0.1, 0.1), probe = random_matrix(b, d, rng);
    const std::vector<double> ts{0, 1, 2, 3};
    std::vector<Parameter*> ps{&x, &mem.eta_raw};
    for (Parameter* p : head.parameters()) ps.push_back(p);
    auto f = [&](ad::Graph& g) {
        mem.state = w0;
        return ad::sum(ad::hadamard(process_batch(g, mem, head, g.param(x), ts), g.constant(probe)));
    };
    EXPECT_LT(grad_check(f, ps, 1e-6).max_relative_error, 1e-3);
}

TEST(ProcessBatch, ZeroRateMatchesSingleSamplePath) {
    std::mt19937_64 rng(45);
    const std::size_t d = 5;
    HebbianMemory mem(d, -800.0);  // sigmoid underflows to exactly 0
    ASSERT_EQ(mem.eta(), 0.0);
    ReadoutHead head(d, rng);
    const Matrix w0 = random_matrix(d, d, rng);
    const Matrix x = random_matrix(3, d, rng);
    const std::vector<double> ts{0, 1, 2};
    mem.state = w0;
    ad::Graph g;
    const Matrix batch = process_batch(g, mem, head, g.constant(x), ts).value();
    for (std::size_t i = 0; i < 3; ++i) {
        HebbianMemory single(d, -800.0);
        single.state = w0;
        ad::Graph h;
        const double t1[] = {0.0};
        const Matrix one = process_batch(h, single, head, h.constant(Matrix::row(x.row_span(i))), t1).value();
        for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(batch(i, c), one[c]);
    }
}

TEST(ProcessBatch, Contracts) {
    std::mt19937_64 rng(46);
    HebbianMemory mem(4);
    ReadoutHead head(4, rng);
    ad::Graph g;
    const Matrix x = random_matrix(2, 4, rng);
    const std::vector<double> unsorted{1.0, 0.5};
    EXPECT_THROW(process_batch(g, mem, head, g.constant(x), unsorted), ContractError);
    // frozen reads do not depend on order
    EXPECT_NO_THROW(process_batch(g, mem, head, g.constant(x), unsorted, false));
    const std::vector<double> one{0.0};
    EXPECT_THROW(process_batch(g, mem, head, g.constant(x), one), DimensionError);
    EXPECT_THROW(process_batch(g, mem, head, g.constant(random_matrix(2, 5, rng)), unsorted), DimensionError);
    Matrix with_zero = x;
    for (std::size_t c = 0; c < 4; ++c) with_zero(1, c) = 0.0;
    const std::vector<double> sorted{0.0, 1.0};
    EXPECT_THROW(process_batch(g, mem, head, g.constant(with_zero), sorted), NumericError);
}

TEST(HebbianMemory, RateStaysInUnitInterval) {
    for (double raw : {-30.0, -5.0, 0.0, 5.0, 30.0}) {
        HebbianMemory mem(2, raw);
        EXPECT_GT(mem.eta(), 0.0);
        EXPECT_LT(mem.eta(), 1.0);
    }
}

TEST(Replay, MatchesSequentialWrites) {
    std::mt19937_64 rng(47);
    const std::size_t d = 5;
    HebbianMemory mem(d, 0.7);
    const Matrix x = random_matrix(6, d, rng);
    replay(mem, x);
    Matrix expected;
    sequential_activations(Matrix(d, d), x, mem.eta(), mem.mode, &expected);
    EXPECT_LT(max_abs_diff(mem.state, expected), 1e-13);
}
