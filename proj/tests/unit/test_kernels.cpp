#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <vector>

#include "prunelab/kernels/kernels.hpp"

namespace k = prunelab::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double zero_rate = 0.2) {
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    std::bernoulli_distribution zero(zero_rate);
    std::vector<double> v(n);
    for (auto& x : v) x = zero(rng) ? 0.0 : d(rng);
    return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

class KernelEquivalence : public ::testing::TestWithParam<const k::KernelTable*> {};

TEST_P(KernelEquivalence, ElementwiseMatchesScalarBitwise) {
    const k::KernelTable& ref = k::scalar_table();
    const k::KernelTable& t = *GetParam();
    std::mt19937_64 rng(7);
    for (std::size_t n = 0; n <= 37; ++n) {
        const auto a = random_vec(n, rng);
        const auto b = random_vec(n, rng);
        const auto y0 = random_vec(n, rng);
        const double alpha = 0.37;

        auto run = [&](const k::KernelTable& kt) {
            std::vector<std::vector<double>> out(7, std::vector<double>(n));
            out[0] = y0;
            kt.axpy(out[0].data(), a.data(), alpha, n);
            kt.mul(out[1].data(), a.data(), b.data(), n);
            out[2] = y0;
            kt.mul_acc(out[2].data(), a.data(), b.data(), n);
            kt.add(out[3].data(), a.data(), b.data(), n);
            kt.scale(out[4].data(), a.data(), -1.25, n);
            kt.relu(out[5].data(), a.data(), n);
            out[6] = y0;
            kt.relu_backward_acc(out[6].data(), a.data(), b.data(), n);
            return out;
        };
        const auto want = run(ref);
        const auto got = run(t);
        for (std::size_t op = 0; op < want.size(); ++op) {
            EXPECT_TRUE(bitwise_equal(want[op], got[op])) << t.name << " op " << op << " n " << n;
        }
    }
}

TEST_P(KernelEquivalence, GemmMatchesScalarBitwise) {
    const k::KernelTable& ref = k::scalar_table();
    const k::KernelTable& t = *GetParam();
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> dim(1, 13);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t m = dim(rng), kk = dim(rng), n = dim(rng);
        const auto a = random_vec(m * kk, rng, 0.3);
        const auto b = random_vec(kk * n, rng, 0.0);
        auto c_ref = random_vec(m * n, rng, 0.0);
        auto c_got = c_ref;
        ref.gemm_acc(c_ref.data(), a.data(), b.data(), m, kk, n);
        t.gemm_acc(c_got.data(), a.data(), b.data(), m, kk, n);
        EXPECT_TRUE(bitwise_equal(c_ref, c_got)) << t.name << " " << m << "x" << kk << "x" << n;
    }
}

TEST_P(KernelEquivalence, GemmMatchesNaiveProduct) {
    const k::KernelTable& t = *GetParam();
    std::mt19937_64 rng(13);
    const std::size_t m = 5, kk = 7, n = 9;
    const auto a = random_vec(m * kk, rng, 0.3);
    const auto b = random_vec(kk * n, rng, 0.0);
    std::vector<double> c(m * n, 0.0);
    t.gemm_acc(c.data(), a.data(), b.data(), m, kk, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double want = 0.0;
            for (std::size_t p = 0; p < kk; ++p) want += a[i * kk + p] * b[p * n + j];
            EXPECT_NEAR(c[i * n + j], want, 1e-12);
        }
    }
}

INSTANTIATE_TEST_SUITE_P(AllTables, KernelEquivalence, ::testing::ValuesIn(k::available_tables()),
                         [](const auto& info) { return std::string(info.param->name); });

}  // namespace

TEST(KernelDispatch, ScalarAlwaysAvailableFirst) {
    const auto tables = k::available_tables();
    ASSERT_FALSE(tables.empty());
    EXPECT_STREQ(tables.front()->name, "scalar");
}

TEST(KernelDispatch, SelectByName) {
    const std::string before = k::active().name;
    EXPECT_FALSE(k::select("no-such-variant"));
    EXPECT_EQ(std::string(k::active().name), before);
    EXPECT_TRUE(k::select("scalar"));
    EXPECT_STREQ(k::active().name, "scalar");
    EXPECT_TRUE(k::select(before));
}
