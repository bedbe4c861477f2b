#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "context_tracker/tensor.hpp"

using namespace context_tracker;

TEST(Tensor, ShapeAndSize) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.dim(1), 3u);
  for (float v : t.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Tensor, RejectsLengthMismatch) { EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ContractError); }

TEST(Tensor, RejectsNonFiniteData) {
  EXPECT_THROW(Tensor({2}, std::vector<float>{1.0f, std::numeric_limits<float>::quiet_NaN()}), ContractError);
  EXPECT_THROW(Tensor({1}, std::vector<float>{std::numeric_limits<float>::infinity()}), ContractError);
}

TEST(Tensor, AtIndexesNchw) {
  Tensor t({1, 2, 2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i);
  EXPECT_EQ(t.at(0, 1, 1, 2), 11.0f);
  EXPECT_EQ(t.at(0, 0, 1, 0), 3.0f);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  const Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r[5], 6.0f);
  EXPECT_THROW(t.reshaped({4, 2}), ContractError);
}

TEST(Tensor, CastToDouble) {
  Tensor t({2}, std::vector<float>{0.5f, -1.25f});
  const auto d = t.cast<double>();
  EXPECT_DOUBLE_EQ(d[0], 0.5);
  EXPECT_DOUBLE_EQ(d[1], -1.25);
}
