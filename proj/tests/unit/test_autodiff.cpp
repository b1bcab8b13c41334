#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "prunelab/autodiff.hpp"
#include "prunelab/errors.hpp"
#include "test_util.hpp"

namespace ad = prunelab::ad;
using prunelab::Tensor2D;
using testutil::gradient_error;
using testutil::weighted_sum;

namespace {

constexpr int kSeeds = 20;
constexpr double kFdTol = 1e-5;

std::vector<int> labels_for(std::size_t batch, std::size_t classes, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
    std::vector<int> y(batch);
    for (auto& v : y) v = pick(rng);
    return y;
}

// Independent KL(softmax(t/T) || softmax(s/T)) * T^2 for one column.
double reference_kd(const std::vector<double>& t, const std::vector<double>& s, double temp) {
    auto softmax = [&](const std::vector<double>& z) {
        double m = *std::max_element(z.begin(), z.end());
        std::vector<double> p(z.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) sum += (p[i] = std::exp((z[i] - m) / temp));
        for (auto& v : p) v /= sum;
        return p;
    };
    const auto p = softmax(t), q = softmax(s);
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
    return temp * temp * kl;
}

}  // namespace

TEST(Matmul, IdentityTimesVector) {
    ad::Graph g;
    const auto out = ad::matmul(g, g.constant(Tensor2D{{1, 0}, {0, 1}}), g.constant(Tensor2D{{3}, {4}}));
    EXPECT_EQ(g.value(out), (Tensor2D{{3}, {4}}));
}

TEST(Matmul, RowTimesColumn) {
    ad::Graph g;
    const auto out = ad::matmul(g, g.constant(Tensor2D{{1, 2}}), g.constant(Tensor2D{{3}, {4}}));
    EXPECT_EQ(g.value(out), (Tensor2D{{11}}));
}

TEST(Matmul, InnerDimensionMismatchThrows) {
    ad::Graph g;
    EXPECT_THROW(ad::matmul(g, g.constant(Tensor2D(2, 3)), g.constant(Tensor2D(2, 3))), prunelab::DimensionError);
}

TEST(Matmul, SumGradientMatchesFiniteDifferences) {
    for (int s = 0; s < kSeeds; ++s) {
        std::mt19937_64 rng(s);
        const Tensor2D a = testutil::uniform(3, 3, rng), b = testutil::uniform(3, 3, rng);
        auto wrt_a = [&](ad::Graph& g, ad::Var p) { return ad::sum(g, ad::matmul(g, p, g.constant(b))); };
        auto wrt_b = [&](ad::Graph& g, ad::Var p) { return weighted_sum(g, ad::matmul(g, g.constant(a), p), s); };
        EXPECT_LT(gradient_error(wrt_a, a), 1e-6) << "seed " << s;
        EXPECT_LT(gradient_error(wrt_b, b), 1e-6) << "seed " << s;
    }
}

TEST(Elementwise, Definitions) {
    ad::Graph g;
    const auto x = g.constant(Tensor2D{{0.0, -3.0, 2.0}});
    const Tensor2D& sig = g.value(ad::sigmoid(g, x));
    EXPECT_EQ(sig(0, 0), 0.5);
    const Tensor2D& r = g.value(ad::relu(g, x));
    EXPECT_EQ(r(0, 0), 0.0);
    EXPECT_EQ(r(0, 1), 0.0);
    EXPECT_EQ(r(0, 2), 2.0);
    EXPECT_EQ(ad::sigmoid(0.0), 0.5);
}

TEST(Elementwise, DispatchAgreesWithNamedOps) {
    std::mt19937_64 rng(3);
    const Tensor2D a = testutil::uniform(3, 4, rng), b = testutil::uniform(3, 4, rng);
    ad::Graph g;
    const auto va = g.constant(a), vb = g.constant(b);
    EXPECT_EQ(g.value(ad::elementwise(g, ad::ElementwiseOp::relu, va)), g.value(ad::relu(g, va)));
    EXPECT_EQ(g.value(ad::elementwise(g, ad::ElementwiseOp::sigmoid, va)), g.value(ad::sigmoid(g, va)));
    EXPECT_EQ(g.value(ad::elementwise(g, ad::ElementwiseOp::add, va, &vb)), g.value(ad::add(g, va, vb)));
    EXPECT_EQ(g.value(ad::elementwise(g, ad::ElementwiseOp::hadamard, va, &vb)), g.value(ad::hadamard(g, va, vb)));
    EXPECT_THROW(ad::elementwise(g, ad::ElementwiseOp::add, va), prunelab::ContractError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
    for (int s = 0; s < kSeeds; ++s) {
        std::mt19937_64 rng(100 + s);
        const Tensor2D a = testutil::uniform(3, 4, rng), b = testutil::uniform(3, 4, rng);
        const Tensor2D bias = testutil::uniform(3, 1, rng);
        const std::vector<testutil::LossBuilder> ops = {
            [&](ad::Graph& g, ad::Var p) { return weighted_sum(g, ad::hadamard(g, p, g.constant(b)), s); },
            [&](ad::Graph& g, ad::Var p) { return weighted_sum(g, ad::hadamard(g, p, p), s); },
            [&](ad::Graph& g, ad::Var p) { return weighted_sum(g, ad::add(g, p, g.constant(b)), s); },
            [&](ad::Graph& g, ad::Var p) { return weighted_sum(g, ad::relu(g, p), s); },
            [&](ad::Graph& g, ad::Var p) { return weighted_sum(g, ad::sigmoid(g, p), s); },
            [&](ad::Graph& g, ad::Var p) { return weighted_sum(g, ad::scale(g, p, -1.7), s); },
            [&](ad::Graph& g, ad::Var p) { return weighted_sum(g, ad::add_scalar(g, p, 0.3), s); },
            [&](ad::Graph& g, ad::Var p) { return weighted_sum(g, ad::add_bias(g, p, g.constant(bias)), s); },
        };
        for (std::size_t i = 0; i < ops.size(); ++i) {
            EXPECT_LT(gradient_error(ops[i], a), kFdTol) << "op " << i << " seed " << s;
        }
        auto wrt_bias = [&](ad::Graph& g, ad::Var p) { return weighted_sum(g, ad::add_bias(g, g.constant(a), p), s); };
        EXPECT_LT(gradient_error(wrt_bias, bias), kFdTol) << "seed " << s;
    }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
    ad::Graph g;
    const std::vector<int> y{2};
    const auto loss = ad::softmax_cross_entropy(g, g.constant(Tensor2D(4, 1, 0.7)), y);
    EXPECT_NEAR(g.value(loss)(0, 0), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
    ad::Graph g;
    const std::vector<int> y{0};
    const auto loss = ad::softmax_cross_entropy(g, g.constant(Tensor2D{{10}, {-10}}), y);
    EXPECT_NEAR(g.value(loss)(0, 0), std::log1p(std::exp(-20.0)), 1e-15);
    EXPECT_NEAR(g.value(loss)(0, 0), 2.06e-9, 0.01e-9);
}

TEST(CrossEntropy, LargeLogitsStayFinite) {
    ad::Graph g;
    const std::vector<int> y{1};
    const auto loss = ad::softmax_cross_entropy(g, g.constant(Tensor2D{{1000}, {-1000}}), y);
    EXPECT_NEAR(g.value(loss)(0, 0), 2000.0, 1e-9);
}

TEST(CrossEntropy, BadLabelThrows) {
    ad::Graph g;
    const std::vector<int> y{5};
    EXPECT_THROW(ad::softmax_cross_entropy(g, g.constant(Tensor2D(3, 1)), y), prunelab::IndexError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
    for (int s = 0; s < kSeeds; ++s) {
        std::mt19937_64 rng(200 + s);
        const Tensor2D logits = testutil::uniform(5, 3, rng);
        const auto y = labels_for(3, 5, rng);
        auto build = [&](ad::Graph& g, ad::Var p) { return ad::softmax_cross_entropy(g, p, y); };
        EXPECT_LT(gradient_error(build, logits), 1e-6) << "seed " << s;
    }
}

TEST(Distillation, IdenticalLogitsGiveZero) {
    ad::Graph g;
    const Tensor2D z{{0.3}, {-1.2}, {2.0}};
    EXPECT_EQ(g.value(ad::kd_divergence(g, z, g.constant(z), 2.0))(0, 0), 0.0);
}

TEST(Distillation, MatchesHandEvaluatedKl) {
    ad::Graph g;
    const double got = g.value(ad::kd_divergence(g, Tensor2D{{1}, {0}}, g.constant(Tensor2D{{0}, {1}}), 1.0))(0, 0);
    const double want = reference_kd({1, 0}, {0, 1}, 1.0);
    EXPECT_NEAR(got, want, 1e-15);
    // Log ratios are +1 and -1, so KL = p0 - p1 = tanh(1/2).
    EXPECT_NEAR(got, std::tanh(0.5), 1e-15);
}

TEST(Distillation, TemperatureScalesAsDocumented) {
    std::mt19937_64 rng(5);
    const Tensor2D t = testutil::uniform(4, 3, rng), s = testutil::uniform(4, 3, rng);
    ad::Graph g;
    const double got = g.value(ad::kd_divergence(g, t, g.constant(s), 2.5))(0, 0);
    double want = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
        std::vector<double> tc(4), sc(4);
        for (std::size_t c = 0; c < 4; ++c) {
            tc[c] = t(c, b);
            sc[c] = s(c, b);
        }
        want += reference_kd(tc, sc, 2.5) / 3.0;
    }
    EXPECT_NEAR(got, want, 1e-13);
}

TEST(Distillation, GradientMatchesFiniteDifferences) {
    for (int s = 0; s < kSeeds; ++s) {
        std::mt19937_64 rng(300 + s);
        const Tensor2D teacher = testutil::uniform(4, 2, rng), student = testutil::uniform(4, 2, rng);
        for (double temp : {1.0, 2.0}) {
            auto build = [&](ad::Graph& g, ad::Var p) { return ad::kd_divergence(g, teacher, p, temp); };
            EXPECT_LT(gradient_error(build, student), 1e-6) << "seed " << s << " T " << temp;
        }
    }
}

TEST(Backward, SumOfParameterGivesOnes) {
    ad::Graph g;
    const auto p = g.parameter("w", Tensor2D(2, 3, 4.0));
    const auto grads = g.backward(ad::sum(g, p));
    EXPECT_EQ(grads.at("w"), Tensor2D::ones(2, 3));
}

TEST(Backward, CompositeNetworkMatchesFiniteDifferences) {
    for (int s = 0; s < kSeeds; ++s) {
        std::mt19937_64 rng(400 + s);
        const Tensor2D w1 = testutil::uniform(5, 4, rng), w2 = testutil::uniform(3, 5, rng);
        const Tensor2D x = testutil::uniform(4, 6, rng);
        const auto y = labels_for(6, 3, rng);
        auto net = [&](ad::Graph& g, ad::Var a, ad::Var b) {
            return ad::softmax_cross_entropy(g, ad::matmul(g, b, ad::relu(g, ad::matmul(g, a, g.constant(x)))), y);
        };
        auto wrt_w1 = [&](ad::Graph& g, ad::Var p) { return net(g, p, g.constant(w2)); };
        auto wrt_w2 = [&](ad::Graph& g, ad::Var p) { return net(g, g.constant(w1), p); };
        EXPECT_LT(gradient_error(wrt_w1, w1), kFdTol) << "seed " << s;
        EXPECT_LT(gradient_error(wrt_w2, w2), kFdTol) << "seed " << s;
    }
}

TEST(Backward, GradientForEveryReachableParameterWithItsShape) {
    ad::Graph g;
    const auto a = g.parameter("a", Tensor2D(2, 3, 0.5));
    const auto b = g.parameter("b", Tensor2D(3, 1, 0.25));
    g.parameter("unused", Tensor2D(4, 4, 1.0));
    const auto grads = g.backward(ad::sum(g, ad::matmul(g, a, b)));
    ASSERT_TRUE(grads.contains("a"));
    ASSERT_TRUE(grads.contains("b"));
    EXPECT_TRUE(grads.at("a").same_shape(Tensor2D(2, 3)));
    EXPECT_TRUE(grads.at("b").same_shape(Tensor2D(3, 1)));
}

TEST(Backward, SecondCallWithoutResetThrows) {
    ad::Graph g;
    const auto loss = ad::sum(g, g.parameter("w", Tensor2D(1, 2, 1.0)));
    g.backward(loss);
    EXPECT_THROW(g.backward(loss), prunelab::ContractError);
    g.reset();
    const auto again = ad::sum(g, g.parameter("w", Tensor2D(1, 2, 1.0)));
    EXPECT_NO_THROW(g.backward(again));
}

TEST(Backward, NonScalarLossThrows) {
    ad::Graph g;
    const auto p = g.parameter("w", Tensor2D(2, 2, 1.0));
    EXPECT_THROW(g.backward(p), prunelab::ContractError);
}

TEST(Backward, ForwardValuesUnchangedByBackward) {
    std::mt19937_64 rng(9);
    ad::Graph g;
    const auto p = g.parameter("w", testutil::uniform(3, 3, rng));
    const auto h = ad::relu(g, ad::matmul(g, p, p));
    const Tensor2D before = g.value(h);
    g.backward(ad::sum(g, h));
    EXPECT_EQ(g.value(h), before);
}

TEST(Backward, ForwardIsBitwiseDeterministic) {
    std::mt19937_64 rng(10);
    const Tensor2D w = testutil::uniform(6, 5, rng), x = testutil::uniform(5, 7, rng);
    auto run = [&] {
        ad::Graph g;
        return g.value(ad::sigmoid(g, ad::matmul(g, g.constant(w), g.constant(x))));
    };
    EXPECT_EQ(run(), run());
}
