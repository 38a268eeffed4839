// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "cmc/cmc.hpp"

using namespace cmc;

namespace {

Tensor random_unit_rows(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return l2_normalize(Tensor({n, d}, v));
}

}  // namespace

TEST(Encoder, IdentityLayerPassesUnitVectorThrough) {
  Rng rng(0);
  auto enc = make_encoder("x", {3, 3}, rng);
  auto w = enc.net.weights[0].mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  auto b = enc.net.biases[0].mutable_data();
  std::fill(b.begin(), b.end(), 0.0);
  Tensor z = encode(enc, Tensor::matrix(1, 3, {0, 1, 0}));
  EXPECT_EQ(z.to_vector(), (std::vector<double>{0, 1, 0}));
}

TEST(Encoder, OutputRowsHaveUnitNorm) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto enc = make_encoder("x", {10, 16, 8}, rng);
    std::vector<double> v(20 * 10);
    for (auto& x : v) x = rng.normal();
    Tensor z = encode(enc, Tensor({20, 10}, v));
    ASSERT_EQ(z.shape(), (Shape{20, 8}));
    for (std::size_t r = 0; r < 20; ++r) {
      double ss = 0.0;
      for (std::size_t c = 0; c < 8; ++c) ss += z.at(r, c) * z.at(r, c);
      EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-12);
    }
  }
}

TEST(Encoder, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto enc = make_encoder("x", {5, 7, 4}, rng);
    std::vector<double> v(6 * 5), w(6 * 4);
    for (auto& x : v) x = rng.normal();
    for (auto& x : w) x = rng.uniform(-1, 1);
    Tensor input({6, 5}, v), weights({6, 4}, w);
    double err = finite_diff_check_params([&] { return sum(mul(encode(enc, input), weights)); }, enc.parameters());
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(Encoder, InitIsUniformWithinFanInBound) {
  Rng rng(4);
  auto net = make_mlp({25, 40}, rng);
  double bound = 1.0 / 5.0, lo = 1.0, hi = -1.0;
  for (double x : net.weights[0].data()) {
    EXPECT_LE(std::abs(x), bound);
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  EXPECT_LT(lo, -0.9 * bound);
  EXPECT_GT(hi, 0.9 * bound);
  EXPECT_TRUE(net.weights[0].requires_grad());
  Rng again(4);
  EXPECT_EQ(make_mlp({25, 40}, again).weights[0].to_vector(), net.weights[0].to_vector());
}

TEST(Encoder, Errors) {
  Rng rng(0);
  auto enc = make_encoder("x", {4, 2}, rng);
  EXPECT_THROW(encode(enc, Tensor::zeros({3, 5})), DimensionError);
  EXPECT_THROW(make_mlp({4}, rng), ParameterError);
  EXPECT_THROW(make_mlp({4, 0, 2}, rng), ParameterError);
  auto w = enc.net.weights[0].mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  auto b = enc.net.biases[0].mutable_data();
  std::fill(b.begin(), b.end(), 0.0);
  EXPECT_THROW(encode(enc, Tensor::filled({1, 4}, 1.0)), DegenerateError);
}

TEST(Score, MatchingRowsGiveInverseTemperature) {
  Tensor z = Tensor::matrix(1, 2, {0.6, 0.8});
  EXPECT_NEAR(score(z, z, Temperature(0.07)).item(), 1.0 / 0.07, 1e-12);
  EXPECT_NEAR(score(z, z, Temperature(0.07)).item(), 14.2857, 1e-4);
}

TEST(Score, OrthogonalAndAntipodal) {
  Tensor a = Tensor::matrix(1, 2, {1, 0});
  Tensor b = Tensor::matrix(1, 2, {0, 1});
  EXPECT_EQ(score(a, b, Temperature(0.07)).item(), 0.0);
  EXPECT_EQ(critic_h(a, b, Temperature(0.07)).item(), 1.0);
  Tensor c = Tensor::matrix(1, 2, {-1, 0});
  EXPECT_EQ(score(a, c, Temperature(0.5)).item(), -2.0);
}

TEST(Score, BoundedByInverseTemperature) {
  Rng rng(1);
  Tensor z1 = random_unit_rows(rng, 30, 5), z2 = random_unit_rows(rng, 40, 5);
  Tensor s = score(z1, z2, Temperature(0.2));
  ASSERT_EQ(s.shape(), (Shape{30, 40}));
  for (double v : s.data()) EXPECT_LE(std::abs(v), 5.0 + 1e-12);
}

TEST(Score, TransposeSymmetry) {
  Rng rng(2);
  Tensor z1 = random_unit_rows(rng, 7, 6), z2 = random_unit_rows(rng, 9, 6);
  Tensor a = score(z1, z2, Temperature(0.07)), b = score(z2, z1, Temperature(0.07));
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(a.at(i, j), b.at(j, i));
}

TEST(Score, InvariantUnderSharedRotation) {
  const std::size_t d = 4;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    // Orthogonal matrix from Gram-Schmidt on a random square matrix.
    std::vector<double> q(d * d);
    for (auto& x : q) x = rng.normal();
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t p = 0; p < c; ++p) {
        double dp = 0.0;
        for (std::size_t r = 0; r < d; ++r) dp += q[r * d + c] * q[r * d + p];
        for (std::size_t r = 0; r < d; ++r) q[r * d + c] -= dp * q[r * d + p];
      }
      double nn = 0.0;
      for (std::size_t r = 0; r < d; ++r) nn += q[r * d + c] * q[r * d + c];
      for (std::size_t r = 0; r < d; ++r) q[r * d + c] /= std::sqrt(nn);
    }
    Tensor Q({d, d}, q);
    Tensor z1 = random_unit_rows(rng, 5, d), z2 = random_unit_rows(rng, 6, d);
    Tensor before = score(z1, z2, Temperature(0.07));
    Tensor after = score(matmul(z1, Q), matmul(z2, Q), Temperature(0.07));
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(before[i], after[i], 1e-10);
  }
}

TEST(Score, DimensionMismatchAndBadTemperature) {
  EXPECT_THROW(score(Tensor::zeros({2, 3}), Tensor::zeros({2, 4}), Temperature(0.1)), DimensionError);
  EXPECT_THROW(Temperature(0.0), ParameterError);
  EXPECT_THROW(Temperature(-0.1), ParameterError);
  EXPECT_THROW(Temperature(std::nan("")), ParameterError);
  EXPECT_EQ(Temperature().value(), 0.07);
}
