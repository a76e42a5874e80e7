#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "rkt/tensor.hpp"

using namespace rkt;

TEST(Tensor, ShapeAndLengthMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, GradSlotMatchesLength) {
  Tensor t({4});
  t.zero_grad();
  ASSERT_TRUE(t.has_grad());
  EXPECT_EQ(t.grad().size(), t.size());
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r.storage(), t.storage());
  EXPECT_THROW(t.reshaped({4}), ShapeError);
}

TEST(Tensor, StackAndSliceAreInverse) {
  std::vector<Tensor> items = {Tensor({2}, {1, 2}), Tensor({2}, {3, 4}), Tensor({2}, {5, 6})};
  Tensor b = stack(items);
  EXPECT_EQ(b.shape(), (Shape{3, 2}));
  for (std::size_t i = 0; i < items.size(); ++i) EXPECT_EQ(b.slice(i), items[i]);
  std::vector<Tensor> bad = {Tensor({2}), Tensor({3})};
  EXPECT_THROW(stack(bad), ShapeError);
}

TEST(Tensor, FinitenessCheck) {
  Tensor t({3}, {1, std::numeric_limits<double>::quiet_NaN(), 2});
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(t.require_finite("test"), NumericError);
}

TEST(Tensor, Norms) {
  std::vector<double> a = {3, 4}, b = {3, 1};
  EXPECT_DOUBLE_EQ(l2_norm(a), 5.0);
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 3.0);
}
