#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "lrcn/random.hpp"
#include "lrcn/tensor.hpp"

using namespace lrcn;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor out({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

}  // namespace

TEST(Tensor, ConstructionChecksShape) {
    EXPECT_THROW(Tensor({2, 0}), DimensionError);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t(1, 2), 1.5);
    EXPECT_TRUE(Tensor{}.empty());
}

TEST(Tensor, ReshapeKeepsRowMajorOrder) {
    const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    const Tensor r = m.reshaped({3, 2});
    EXPECT_EQ(r(0, 1), 2.0);
    EXPECT_EQ(r(1, 0), 3.0);
    EXPECT_THROW(m.reshaped({4, 2}), DimensionError);
    EXPECT_EQ(m.flattened().shape(), Shape({6}));
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    EXPECT_EQ(matmul(Tensor::identity(2), a), a);
}

TEST(Matmul, ZeroMatrixAnnihilates) {
    EXPECT_EQ(matmul(Tensor::identity(2), Tensor::zeros({2, 3})), Tensor::zeros({2, 3}));
}

TEST(Matmul, MatchesTripleLoop) {
    Rng rng(7);
    const Tensor a = rng.uniform_tensor({3, 4}, -1, 1), b = rng.uniform_tensor({4, 2}, -1, 1);
    EXPECT_LE(max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-12);
}

TEST(Matmul, MatchesTripleLoopUpTo64) {
    Rng rng(11);
    for (std::size_t n : {1u, 5u, 17u, 64u}) {
        const Tensor a = rng.uniform_tensor({n, n + 1}, -2, 2), b = rng.uniform_tensor({n + 1, n}, -2, 2);
        const Tensor got = matmul(a, b), want = naive_matmul(a, b);
        for (std::size_t i = 0; i < got.size(); ++i)
            EXPECT_LE(std::abs(got[i] - want[i]), 1e-12 * std::max(1.0, std::abs(want[i])));
    }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    try {
        matmul(Tensor({2, 3}), Tensor({2, 3}));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    }
}

TEST(Matmul, Deterministic) {
    Rng rng(3);
    const Tensor a = rng.uniform_tensor({8, 8}, -1, 1), b = rng.uniform_tensor({8, 8}, -1, 1);
    EXPECT_EQ(matmul(a, b), matmul(a, b));
}

TEST(Activations, SigmoidKnownValues) {
    EXPECT_EQ(sigmoid(0.0), 0.5);
    EXPECT_NEAR(sigmoid(20.0), 1.0, 1e-8);
    EXPECT_NEAR(sigmoid(20.0), 1.0 / (1.0 + std::exp(-20.0)), 1e-16);
}

TEST(Activations, SigmoidSymmetryAndRange) {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(-35.9, 35.9);
        EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-15);
        EXPECT_GT(sigmoid(x), 0.0);
        EXPECT_LT(sigmoid(x), 1.0);
    }
}

TEST(Activations, TanhIdentityOddnessAndRange) {
    EXPECT_EQ(tanh_act(Tensor::vector({0.0}))[0], 0.0);
    Rng rng(6);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(-18.9, 18.9);
        const double t = tanh_act(Tensor::vector({x}))[0];
        EXPECT_NEAR(t, 2.0 * sigmoid(2.0 * x) - 1.0, 1e-12);
        EXPECT_EQ(tanh_act(Tensor::vector({-x}))[0], -t);
        EXPECT_GT(t, -1.0);
        EXPECT_LT(t, 1.0);
    }
}

TEST(Softmax, UniformOnEqualLogits) {
    const Tensor p = softmax(Tensor::vector({0, 0, 0}));
    for (double v : p.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LogsOfIntegersGiveRatios) {
    const Tensor p = softmax(Tensor::vector({std::log(1.0), std::log(2.0), std::log(3.0)}));
    EXPECT_NEAR(p[0], 1.0 / 6.0, 1e-12);
    EXPECT_NEAR(p[1], 2.0 / 6.0, 1e-12);
    EXPECT_NEAR(p[2], 3.0 / 6.0, 1e-12);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor z = rng.uniform_tensor({6}, -30, 30);
        const double k = rng.uniform(-500, 500);
        Tensor shifted = z;
        for (double& v : shifted.values()) v += k;
        const Tensor p = softmax(z), q = softmax(shifted);
        EXPECT_NEAR(sum(p), 1.0, 1e-12);
        EXPECT_LE(max_abs_diff(p, q), 1e-12);
        for (double v : p.values()) EXPECT_GE(v, 0.0);
    }
}

TEST(Softmax, LargeLogitsStayFinite) {
    const Tensor p = softmax(Tensor::vector({1000.0, 1001.0}));
    EXPECT_TRUE(p.all_finite());
    EXPECT_NEAR(p[1], sigmoid(1.0), 1e-15);
    EXPECT_NEAR(log_softmax_at(Tensor::vector({1000.0, 1001.0}).values(), 0), std::log(p[0]), 1e-12);
}

TEST(Softmax, EmptyInputRejected) { EXPECT_THROW(softmax(Tensor{}), DimensionError); }

TEST(FiniteDiff, SumOfSquares) {
    const Tensor g = finite_diff_grad(
        [](const Tensor& x) {
            double s = 0;
            for (double v : x.values()) s += v * v;
            return s;
        },
        Tensor::vector({1.0, 2.0}), 1e-4);
    EXPECT_NEAR(g[0], 2.0, 1e-6);
    EXPECT_NEAR(g[1], 4.0, 1e-6);
}

TEST(FiniteDiff, ConstantFunctionHasZeroGradient) {
    const Tensor g = finite_diff_grad([](const Tensor&) { return 3.0; }, Tensor::vector({1, 2, 3}), 1e-4);
    EXPECT_EQ(g, Tensor::zeros({3}));
}

TEST(FiniteDiff, SigmoidSlopeAtZero) {
    const Tensor g = finite_diff_grad([](const Tensor& x) { return sigmoid(x[0]); }, Tensor::vector({0.0}), 1e-4);
    EXPECT_NEAR(g[0], 0.25, 1e-6);
}

TEST(FiniteDiff, NonFiniteValueThrows) {
    EXPECT_THROW(finite_diff_grad([](const Tensor& x) { return std::log(x[0]); }, Tensor::vector({0.0}), 1e-4),
                 NumericError);
}

TEST(Tensor, ConcatSkipsNullOperand) {
    const Tensor a = Tensor::vector({1, 2}), b = Tensor::vector({3});
    EXPECT_EQ(concat(a, b), Tensor::vector({1, 2, 3}));
    EXPECT_EQ(concat(Tensor{}, b), b);
    EXPECT_EQ(hadamard(a, a), Tensor::vector({1, 4}));
    EXPECT_THROW(hadamard(a, b), DimensionError);
}

TEST(Rng, SeededStreamsRepeat) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
    Rng c(43);
    EXPECT_NE(Rng(42).next(), c.next());
}

TEST(Rng, StateRoundTrip) {
    Rng a(1);
    for (int i = 0; i < 10; ++i) a.next();
    Rng b;
    b.set_state(a.state());
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(Rng, IndexAndUniformRanges) {
    Rng r(8);
    std::set<std::size_t> seen;
    double mean = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const std::size_t k = r.index(5);
        ASSERT_LT(k, 5u);
        seen.insert(k);
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        mean += u;
    }
    EXPECT_EQ(seen.size(), 5u);
    EXPECT_NEAR(mean / 20000.0, 0.5, 0.01);
}

TEST(Rng, ShuffleIsPermutation) {
    Rng r(2);
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    r.shuffle(v.begin(), v.end());
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
}
