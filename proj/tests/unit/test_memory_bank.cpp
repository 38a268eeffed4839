// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "cmc/cmc.hpp"

using namespace cmc;

namespace {

double norm_of(std::span<const double> r) {
  double ss = 0.0;
  for (double v : r) ss += v * v;
  return std::sqrt(ss);
}

}  // namespace

TEST(MemoryBank, InitRowsAreUnitNormAndSeeded) {
  auto bank = init_bank({"a", "b"}, 50, 8, 3);
  for (const char* v : {"a", "b"})
    for (std::size_t i = 0; i < 50; ++i) EXPECT_NEAR(norm_of(bank.row(v, i)), 1.0, 1e-12);
  EXPECT_TRUE(bank == init_bank({"a", "b"}, 50, 8, 3));
  EXPECT_FALSE(bank == init_bank({"a", "b"}, 50, 8, 4));
  EXPECT_NE(bank.rows("a"), bank.rows("b"));
  EXPECT_EQ(bank.momentum(), 0.5);
}

TEST(MemoryBank, RandomRowsAreNearlyOrthogonalOnAverage) {
  const std::size_t n = 1000, d = 64;
  auto bank = init_bank({"x"}, n, d, 11);
  const auto& rows = bank.rows("x");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double c = 0.0;
      for (std::size_t k = 0; k < d; ++k) c += rows[i * d + k] * rows[j * d + k];
      total += c;
      ++count;
    }
  EXPECT_LT(std::abs(total / count), 0.02);
}

TEST(MemoryBank, MomentumZeroStoresNormalizedEmbedding) {
  auto bank = init_bank({"x"}, 4, 2, 0);
  std::vector<std::size_t> ids{2};
  bank.update("x", ids, Tensor::matrix(1, 2, {3, 4}), 0.0);
  EXPECT_NEAR(bank.row("x", 2)[0], 0.6, 1e-15);
  EXPECT_NEAR(bank.row("x", 2)[1], 0.8, 1e-15);
}

TEST(MemoryBank, MomentumOneFreezesRows) {
  auto bank = init_bank({"x"}, 4, 2, 0);
  auto before = bank.rows("x");
  std::vector<std::size_t> ids{0, 3};
  bank.update("x", ids, Tensor::matrix(2, 2, {1, 0, 0, 1}), 1.0);
  EXPECT_EQ(bank.rows("x"), before);
}

TEST(MemoryBank, HalfMomentumBlendsAndRenormalizes) {
  MemoryBank bank({"x"}, 2, 2, 0.5, 0);
  bank.mutable_rows("x") = {1, 0, 1, 0};
  std::vector<std::size_t> ids{1};
  bank.update("x", ids, Tensor::matrix(1, 2, {0, 1}));
  const double s = std::sqrt(0.5);
  EXPECT_NEAR(bank.row("x", 1)[0], s, 1e-15);
  EXPECT_NEAR(bank.row("x", 1)[1], s, 1e-15);
  EXPECT_NEAR(bank.row("x", 1)[0], 0.7071, 1e-4);
  // Untouched row keeps its value.
  EXPECT_EQ(bank.row("x", 0)[0], 1.0);
}

TEST(MemoryBank, UnvisitedRowsRetainInitialization) {
  auto bank = init_bank({"x"}, 30, 5, 7);
  auto init = bank.rows("x");
  std::vector<std::size_t> ids{4, 9, 17};
  Rng rng(1);
  std::vector<double> e(15);
  for (auto& x : e) x = rng.normal();
  bank.update("x", ids, Tensor({3, 5}, e));
  for (std::size_t i = 0; i < 30; ++i) {
    bool touched = i == 4 || i == 9 || i == 17;
    auto now = bank.row("x", i);
    bool same = std::equal(now.begin(), now.end(), init.begin() + i * 5);
    EXPECT_EQ(same, !touched) << i;
    EXPECT_NEAR(norm_of(now), 1.0, 1e-6);
  }
}

TEST(MemoryBank, ReadYourWrites) {
  auto bank = init_bank({"x"}, 10, 3, 2);
  std::vector<double> old(bank.row("x", 6).begin(), bank.row("x", 6).end());
  std::vector<double> e{0.2, -0.5, 0.9};
  std::vector<std::size_t> ids{6};
  bank.update("x", ids, Tensor({1, 3}, e), 0.3);
  std::vector<double> want(3);
  double ss = 0.0;
  for (int j = 0; j < 3; ++j) {
    want[j] = 0.3 * old[j] + 0.7 * e[j];
    ss += want[j] * want[j];
  }
  for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(bank.row("x", 6)[j], want[j] / std::sqrt(ss));
}

TEST(MemoryBank, UpdateErrors) {
  auto bank = init_bank({"x"}, 5, 2, 0);
  std::vector<std::size_t> dup{1, 1}, out_of_range{5}, one{0};
  EXPECT_THROW(bank.update("x", dup, Tensor::matrix(2, 2, {1, 0, 1, 0})), ParameterError);
  EXPECT_THROW(bank.update("x", out_of_range, Tensor::matrix(1, 2, {1, 0})), IndexError);
  EXPECT_THROW(bank.update("x", one, Tensor::matrix(1, 3, {1, 0, 0})), DimensionError);
  EXPECT_THROW(bank.update("y", one, Tensor::matrix(1, 2, {1, 0})), ConfigError);
  EXPECT_THROW(bank.update("x", one, Tensor::matrix(1, 2, {1, 0}), 1.5), ParameterError);
  EXPECT_THROW(bank.row("x", 5), IndexError);
  EXPECT_THROW(init_bank({"x"}, 0, 2, 0), ParameterError);
  EXPECT_THROW(MemoryBank({"x"}, 3, 2, -0.1, 0), ParameterError);
}

TEST(Negatives, TwoRowsForceTheOtherRow) {
  auto bank = init_bank({"x"}, 2, 3, 0);
  Rng rng(0);
  for (std::size_t idx : bank.sample_indices(1, 0, rng)) EXPECT_EQ(idx, 1u);
  Tensor neg = bank.sample_negatives("x", 1, 0, rng);
  ASSERT_EQ(neg.shape(), (Shape{1, 3}));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(neg[j], bank.row("x", 1)[j]);
}

TEST(Negatives, DrawsAreUniform) {
  const std::size_t n = 100, draws = 100000;
  auto bank = init_bank({"x"}, n, 2, 0);
  Rng rng(21);
  std::vector<int> counts(n, 0);
  for (std::size_t t = 0; t < draws / 1000; ++t)
    for (std::size_t idx : bank.sample_indices(1000, 0, rng)) ++counts[idx];
  EXPECT_EQ(counts[0], 0);
  const double p = 1.0 / (n - 1), mean = draws * p, sd = std::sqrt(draws * p * (1 - p));
  for (std::size_t i = 1; i < n; ++i) EXPECT_NEAR(counts[i], mean, 3.0 * sd) << i;
}

TEST(Negatives, ExcludedIdNeverAppears) {
  auto bank = init_bank({"x"}, 50, 2, 0);
  Rng rng(3);
  for (std::size_t exclude : {0u, 17u, 49u}) {
    for (int t = 0; t < 10; ++t)
      for (std::size_t idx : bank.sample_indices(1000, exclude, rng)) ASSERT_NE(idx, exclude);
  }
}

TEST(Negatives, WithoutReplacementIsDistinctAndBounded) {
  auto bank = init_bank({"x"}, 10, 2, 0);
  Rng rng(4);
  auto idx = bank.sample_indices(9, 3, rng, Sampling::without_replacement);
  std::sort(idx.begin(), idx.end());
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1, 2, 4, 5, 6, 7, 8, 9}));
  EXPECT_THROW(bank.sample_indices(10, 3, rng, Sampling::without_replacement), ParameterError);
}

TEST(Negatives, BatchedDrawExcludesEachAnchor) {
  auto bank = init_bank({"x"}, 3, 2, 5);
  Rng rng(6);
  std::vector<std::size_t> anchors{0, 1, 2};
  Tensor neg = bank.sample_negatives("x", anchors, 50, rng);
  ASSERT_EQ(neg.shape(), (Shape{3, 50, 2}));
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t j = 0; j < 50; ++j) {
      auto own = bank.row("x", a);
      bool is_own = neg[(a * 50 + j) * 2] == own[0] && neg[(a * 50 + j) * 2 + 1] == own[1];
      EXPECT_FALSE(is_own);
    }
  EXPECT_FALSE(neg.requires_grad());
}
