#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "prunelab/errors.hpp"
#include "prunelab/tensor.hpp"

using prunelab::Tensor2D;

TEST(Tensor, ValuesLengthEqualsRowsTimesCols) {
    const Tensor2D t(3, 4, 1.5);
    EXPECT_EQ(t.rows(), 3u);
    EXPECT_EQ(t.cols(), 4u);
    EXPECT_EQ(t.size(), 12u);
    EXPECT_EQ(t.values().size(), 12u);
    EXPECT_DOUBLE_EQ(t.sum(), 18.0);
}

TEST(Tensor, InitializerListIsRowMajor) {
    const Tensor2D t{{1, 2, 3}, {4, 5, 6}};
    EXPECT_EQ(t(0, 2), 3.0);
    EXPECT_EQ(t(1, 0), 4.0);
    EXPECT_EQ(t[4], 5.0);
}

TEST(Tensor, RaggedInitializerThrows) {
    EXPECT_THROW((Tensor2D{{1, 2}, {3}}), prunelab::DimensionError);
}

TEST(Tensor, ValueCountMustMatchShape) {
    EXPECT_THROW(Tensor2D(2, 2, std::vector<double>{1, 2, 3}), prunelab::DimensionError);
}

TEST(Tensor, TransposeSwapsIndices) {
    const Tensor2D t{{1, 2, 3}, {4, 5, 6}};
    const Tensor2D tt = t.transposed();
    ASSERT_EQ(tt.rows(), 3u);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(tt(j, i), t(i, j));
    }
}

TEST(Tensor, FiniteCheckSeesNanAndInf) {
    Tensor2D t(2, 2, 0.0);
    EXPECT_TRUE(t.all_finite());
    t[3] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(t.all_finite());
    t[3] = std::numeric_limits<double>::infinity();
    EXPECT_FALSE(t.all_finite());
}

TEST(Tensor, EqualityIsShapeAndValues) {
    EXPECT_EQ(Tensor2D(2, 3, 1.0), Tensor2D(2, 3, 1.0));
    EXPECT_NE(Tensor2D(2, 3, 1.0), Tensor2D(3, 2, 1.0));
    EXPECT_NE(Tensor2D(2, 3, 1.0), Tensor2D(2, 3, 2.0));
}

TEST(Tensor, RequireSameShapeNamesBothShapes) {
    try {
        prunelab::require_same_shape(Tensor2D(2, 3), Tensor2D(3, 2), "op");
        FAIL();
    } catch (const prunelab::DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("3x2"), std::string::npos) << msg;
    }
}
