// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "cmc/tensor.hpp"
#include "cmc/rng.hpp"

using namespace cmc;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor({2, 0}, {}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Matmul, IdentityTimesIdentity) {
  Tensor i2 = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_EQ(matmul(i2, i2).to_vector(), i2.to_vector());
}

TEST(Matmul, RightIdentity) {
  Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(matmul(a, Tensor::matrix(2, 2, {1, 0, 0, 1})).to_vector(), a.to_vector());
}

TEST(Matmul, RowTimesColumn) {
  Tensor out = matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4}));
  EXPECT_EQ(out.shape(), (Shape{1, 1}));
  EXPECT_EQ(out.item(), 11.0);
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos);
  }
}

TEST(Matmul, GradientsAreOuterProducts) {
  Tensor a = Tensor::matrix(1, 2, {1, 2}, true);
  Tensor b = Tensor::matrix(2, 1, {3, 4}, true);
  backward(sum(matmul(a, b)));
  EXPECT_EQ(std::vector<double>(a.grad().begin(), a.grad().end()), (std::vector<double>{3, 4}));
  EXPECT_EQ(std::vector<double>(b.grad().begin(), b.grad().end()), (std::vector<double>{1, 2}));
}

TEST(L2Normalize, ThreeFourFive) {
  Tensor y = l2_normalize(Tensor::matrix(1, 2, {3, 4}));
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
}

TEST(L2Normalize, UnitVectorIsFixed) {
  Tensor u = Tensor::matrix(1, 3, {0, 1, 0});
  EXPECT_EQ(l2_normalize(u).to_vector(), u.to_vector());
}

TEST(L2Normalize, OnesGiveInverseRootTwo) {
  Tensor y = l2_normalize(Tensor::matrix(1, 2, {1, 1}));
  EXPECT_NEAR(y[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(y[1], 0.7071, 1e-4);
}

TEST(L2Normalize, ZeroRowIsDegenerate) {
  EXPECT_THROW(l2_normalize(Tensor::matrix(2, 2, {1, 0, 0, 0})), DegenerateError);
  EXPECT_THROW(l2_normalize(Tensor::matrix(1, 2, {1e-9, 0})), DegenerateError);
}

TEST(L2Normalize, RowsHaveUnitNorm) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Tensor y = l2_normalize(random_tensor(rng, {20, 7}, -5, 5));
    for (std::size_t i = 0; i < 20; ++i) {
      double ss = 0.0;
      for (std::size_t j = 0; j < 7; ++j) ss += y.at(i, j) * y.at(i, j);
      EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-12);
    }
  }
}

TEST(LogSoftmaxNll, UniformLogits) {
  Tensor logits = Tensor::filled({3, 8}, 0.25);
  EXPECT_NEAR(log_softmax_nll(logits, {0, 4, 7}).item(), std::log(8.0), 1e-14);
  EXPECT_NEAR(std::log(8.0), 2.0794, 1e-4);
}

TEST(LogSoftmaxNll, Saturated) {
  EXPECT_LT(log_softmax_nll(Tensor::matrix(1, 2, {30, -30}), {0}).item(), 1e-25);
}

TEST(LogSoftmaxNll, OneZero) {
  double v = log_softmax_nll(Tensor::matrix(1, 2, {1, 0}), {0}).item();
  EXPECT_NEAR(v, std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(v, 0.31326, 1e-5);
}

TEST(LogSoftmaxNll, TargetOutOfRange) {
  EXPECT_THROW(log_softmax_nll(Tensor::matrix(1, 2, {1, 0}), {2}), IndexError);
}

TEST(LogSoftmaxNll, ShiftInvariant) {
  Rng rng(3);
  Tensor x = random_tensor(rng, {5, 6}, -3, 3);
  Tensor shifted = add_scalar(x, 17.25);
  std::vector<std::size_t> t{0, 1, 2, 3, 5};
  EXPECT_NEAR(log_softmax_nll(x, t).item(), log_softmax_nll(shifted, t).item(), 1e-12);
}

TEST(LogSoftmaxNll, GradientIsSoftmaxMinusOnehot) {
  Tensor x = Tensor::matrix(1, 2, {1, 0}, true);
  backward(log_softmax_nll(x, {0}));
  double p0 = 1.0 / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(x.grad()[0], p0 - 1.0, 1e-15);
  EXPECT_NEAR(x.grad()[1], 1.0 - p0, 1e-15);
}

TEST(Backward, SquareAtThree) {
  Tensor x = Tensor::scalar(3.0, true);
  backward(square(x));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, ConstantHasZeroGradient) {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor c = Tensor::scalar(5.0);
  backward(add(scale(x, 0.0), c));
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, NonScalarRootIsContractError) {
  Tensor x = Tensor::zeros({2, 2}, true);
  EXPECT_THROW(backward(x), ContractError);
}

TEST(Backward, FanOutAccumulates) {
  Tensor x = Tensor::scalar(2.0, true);
  backward(add(mul(x, x), x));  // 2x + 1
  EXPECT_EQ(x.grad()[0], 5.0);
}

TEST(Backward, LinearInTheRoot) {
  Rng rng(11);
  Tensor x = random_tensor(rng, {3, 4});
  x.set_requires_grad(true);
  auto f = [&] { return sum(exp(x)); };
  auto g = [&] { return sum(square(matmul(x, transpose(x)))); };
  backward(f());
  std::vector<double> gf(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(g());
  std::vector<double> gg(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(add(f(), g()));
  for (std::size_t i = 0; i < gf.size(); ++i) EXPECT_NEAR(x.grad()[i], gf[i] + gg[i], 1e-12);
}

TEST(Backward, VisitsEachNodeOnce) {
  // A diamond: y = a + a with a = x^2; a visited twice would double the gradient.
  Tensor x = Tensor::scalar(1.5, true);
  Tensor a = square(x);
  backward(add(a, a));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0 * 1.5);
}

TEST(Backward, NonTrackedLeavesStayEmpty) {
  Tensor x = Tensor::scalar(1.0, true);
  Tensor c = Tensor::scalar(2.0);
  backward(mul(x, c));
  EXPECT_FALSE(c.has_grad());
}

TEST(FiniteDiff, QuadraticForm) {
  Tensor a = Tensor::matrix(3, 3, {2, 1, 0, 1, 3, 1, 0, 1, 4});
  Tensor x = Tensor::matrix(1, 3, {0.3, -0.7, 1.1});
  double err = finite_diff_check([&](const Tensor& v) { return sum(mul(matmul(v, a), v)); }, x);
  EXPECT_LT(err, 1e-7);
}

TEST(FiniteDiff, NormalizeThenDot) {
  Rng rng(5);
  Tensor b = l2_normalize(random_tensor(rng, {4, 3}));
  Tensor x = random_tensor(rng, {4, 3});
  double err = finite_diff_check([&](const Tensor& v) { return sum(row_dot(l2_normalize(v), b)); }, x);
  EXPECT_LT(err, 1e-4);
}

TEST(FiniteDiff, ConstantFunction) {
  Tensor x = Tensor::matrix(1, 2, {1, 2});
  EXPECT_EQ(finite_diff_check([](const Tensor&) { return Tensor::scalar(4.0); }, x), 0.0);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  Tensor x = Tensor::matrix(1, 1, {1});
  EXPECT_THROW(finite_diff_check([](const Tensor& v) { return sum(v); }, x, 0.0), ParameterError);
}

// Every differentiable op on random inputs, 10 seeds.
TEST(FiniteDiff, ElementwiseOpsOverSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {3, 4}, 0.3, 1.5);
    Tensor y = random_tensor(rng, {3, 4});
    Tensor w = random_tensor(rng, {3, 4}, 0.5, 1.5);
    auto check = [&](auto op) {
      return finite_diff_check_params([&] { return sum(mul(op(), w)); }, {x, y});
    };
    EXPECT_LT(check([&] { return add(x, y); }), 1e-4);
    EXPECT_LT(check([&] { return sub(x, y); }), 1e-4);
    EXPECT_LT(check([&] { return mul(x, y); }), 1e-4);
    EXPECT_LT(check([&] { return scale(exp(y), 0.5); }), 1e-4);
    EXPECT_LT(check([&] { return log(x); }), 1e-4);
    EXPECT_LT(check([&] { return relu(x); }), 1e-4);
    EXPECT_LT(check([&] { return abs(x); }), 1e-4);
    EXPECT_LT(check([&] { return softplus(y); }), 1e-4);
    EXPECT_LT(check([&] { return square(add_scalar(y, 0.2)); }), 1e-4);
  }
}

TEST(FiniteDiff, StructuralOpsOverSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 100);
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 2});
    Tensor bias = random_tensor(rng, {2});
    Tensor cand = random_tensor(rng, {3, 5, 4});
    Tensor w1 = random_tensor(rng, {3, 2}, 0.5, 1.5);
    Tensor w2 = random_tensor(rng, {3, 5}, 0.5, 1.5);
    Tensor w5 = random_tensor(rng, {3, 1}, 0.5, 1.5);
    EXPECT_LT(finite_diff_check_params([&] { return sum(mul(add_row_bias(matmul(a, b), bias), w1)); }, {a, b, bias}), 1e-4);
    EXPECT_LT(finite_diff_check_params([&] { return sum(mul(batched_row_dot(l2_normalize(a), cand), w2)); }, {a, cand}),
              1e-4);
    Tensor w4 = random_tensor(rng, {3, 6}, 0.5, 1.5);
    EXPECT_LT(finite_diff_check_params(
                  [&] { return sum(mul(square(concat_cols({matmul(a, b), take_middle(cand, 2)})), w4)); }, {a, b, cand}),
              1e-4);
    EXPECT_LT(finite_diff_check_params([&] { return sum(mul(square(select_rows(a, {2, 0, 2})), a)); }, {a}), 1e-4);
    EXPECT_LT(finite_diff_check_params([&] { return mean(square(reshape(transpose(a), {2, 6}))); }, {a}), 1e-4);
    EXPECT_LT(finite_diff_check_params([&] { return log_softmax_nll(matmul(a, b), {1, 0, 1}); }, {a, b}), 1e-4);
    EXPECT_LT(finite_diff_check_params([&] { return sum(mul(row_dot(a, select_rows(a, {2, 0, 1})), w5)); }, {a}), 1e-4);
    EXPECT_LT(finite_diff_check_params([&] { return exp(mean(a)); }, {a}), 1e-4);
    EXPECT_LT(finite_diff_check_params([&] { return sum(square(gather_rows(a, 2, 3, {0, 1, 2, 2, 2, 1}))); }, {a}), 1e-4);
  }
}

TEST(Ops, ShapeErrors) {
  EXPECT_THROW(add(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(add_row_bias(Tensor::zeros({2, 2}), Tensor::zeros({3})), DimensionError);
  EXPECT_THROW(reshape(Tensor::zeros({2, 2}), {3}), DimensionError);
  EXPECT_THROW(take_middle(Tensor::zeros({2, 2, 2}), 2), IndexError);
  EXPECT_THROW(log(Tensor::matrix(1, 1, {-1.0})), Error);
}

TEST(Ops, ConcatColsJoinsFeatures) {
  Tensor c = concat_cols({Tensor::matrix(2, 1, {1, 2}), Tensor::matrix(2, 2, {3, 4, 5, 6})});
  EXPECT_EQ(c.to_vector(), (std::vector<double>{1, 3, 4, 2, 5, 6}));
}

TEST(Ops, DetachCutsTheGraph) {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = square(x).detach();
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(y.item(), 4.0);
}
