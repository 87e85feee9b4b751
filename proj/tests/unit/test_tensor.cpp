#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "advlab/errors.hpp"
#include "advlab/parallel.hpp"
#include "advlab/rng.hpp"
#include "advlab/tensor.hpp"

using namespace advlab;

TEST(Tensor, ConstructAndIndex) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_EQ(t.row_size(), 3u);
  EXPECT_DOUBLE_EQ(t[5], 1.5);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, SizeMismatchThrows) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_THROW(Tensor({2}).item(), ContractError);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r.values(), t.values());
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, SliceAndGatherRows) {
  Tensor t({3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.slice_rows(1, 3).values(), (std::vector<double>{3, 4, 5, 6}));
  const std::vector<std::size_t> idx{2, 0};
  EXPECT_EQ(t.gather_rows(idx).values(), (std::vector<double>{5, 6, 1, 2}));
}

TEST(Tensor, StackRows) {
  const std::vector<Tensor> rows{Tensor({2}, std::vector<double>{1, 2}), Tensor({2}, std::vector<double>{3, 4})};
  const Tensor s = stack_rows(rows);
  EXPECT_EQ(s.shape(), (Shape{2, 2}));
  EXPECT_EQ(s.values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Tensor, EqualityIgnoresGrad) {
  Tensor a({2}, 1.0), b({2}, 1.0);
  a.zero_grad();
  EXPECT_EQ(a, b);
  EXPECT_DOUBLE_EQ(max_abs_diff(a, Tensor({2}, std::vector<double>{1.0, 1.25})), 0.25);
}

TEST(Tensor, AllFinite) {
  Tensor t({2}, 0.0);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, UniformInRange) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = r.below(7);
    ASSERT_LT(k, 7u);
  }
}

TEST(Rng, NormalMoments) {
  Rng r(3);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, DeriveSeedSpreads) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 100; ++a) {
    for (std::uint64_t b = 0; b < 10; ++b) seen.insert(derive_seed(7, a, b));
  }
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
}

TEST(Parallel, CoversEveryTaskOnce) {
  for (std::size_t threads : {1u, 3u, 8u}) {
    std::vector<int> hits(50, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
}

TEST(Parallel, RethrowsLowestFailingTask) {
  try {
    parallel_for(20, 4, [](std::size_t i) {
      if (i == 5 || i == 13) throw std::runtime_error("task " + std::to_string(i));
    });
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "task 5");
  }
}
