// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "loraplus/numerics.hpp"

using namespace loraplus;

TEST(Matrix, ShapeAndAccess) {
  Matrix m{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.size(), 6u);
  EXPECT_EQ(m(1, 2), 6.0);
  EXPECT_EQ(m.col(1), (Vector{2, 5}));
  EXPECT_THROW(Matrix(2, 2, Vector{1, 2, 3}), DimensionError);
}

TEST(Matrix, ProductsMatchHandValues) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5, 6}, {7, 8}};
  EXPECT_EQ(matmul(a, b), (Matrix{{19, 22}, {43, 50}}));
  EXPECT_EQ(matvec(a, Vector{1, 1}), (Vector{3, 7}));
  EXPECT_EQ(transpose(a), (Matrix{{1, 3}, {2, 4}}));
  EXPECT_EQ(outer(Vector{1, 2}, Vector{3, 4, 5}), (Matrix{{3, 4, 5}, {6, 8, 10}}));
  EXPECT_THROW(matmul(a, Matrix(3, 1)), DimensionError);
  EXPECT_THROW((void)dot(Vector{1}, Vector{1, 2}), DimensionError);
}

TEST(Matrix, AssociativityAndDistributivity) {
  SeededRng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = gaussian_matrix(10, 10, 1.0, rng);
    const Matrix b = gaussian_matrix(10, 10, 1.0, rng);
    const Matrix c = gaussian_matrix(10, 10, 1.0, rng);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    const Matrix dist_l = matmul(a, b + c);
    const Matrix dist_r = matmul(a, b) + matmul(a, c);
    EXPECT_LE(norm_inf(left - right), 1e-12 * norm_inf(left) * 10);
    EXPECT_LE(norm_inf(dist_l - dist_r), 1e-12 * norm_inf(dist_l) * 10);
  }
}

TEST(SeededRng, IdenticalSeedsGiveIdenticalStreams) {
  SeededRng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.gaussian();
    EXPECT_EQ(x, b.gaussian());
    differs |= x != c.gaussian();
  }
  EXPECT_TRUE(differs);
}

TEST(SeededRng, DerivedStreamsAreIndependentOfParentPosition) {
  SeededRng parent(9);
  const SeededRng child_before = parent.derive(5);
  (void)parent.next_u64();
  SeededRng x = child_before;
  SeededRng y = SeededRng(9).derive(5);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(x.next_u64(), y.next_u64());
}

TEST(SeededRng, UniformStaysInOpenUnitInterval) {
  SeededRng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(GaussianMatrix, ZeroStdGivesZeros) {
  SeededRng rng(11);
  const Matrix m = gaussian_matrix(2, 3, 0.0, rng);
  EXPECT_TRUE(m.all_zero());
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
}

TEST(GaussianMatrix, ThousandSamplesMeanAndVariance) {
  SeededRng rng(7);
  const Matrix m = gaussian_matrix(1000, 1, 1.0, rng);
  double mean = 0.0;
  for (const double v : m.values()) mean += v;
  mean /= 1000.0;
  double var = 0.0;
  for (const double v : m.values()) var += (v - mean) * (v - mean);
  var /= 999.0;
  EXPECT_NEAR(mean, 0.0, 0.1);
  EXPECT_NEAR(var, 1.0, 0.15);
}

TEST(GaussianMatrix, LargeSampleVarianceWithinFivePercent) {
  for (const double s : {0.5, 1.0, 3.0}) {
    SeededRng rng(2024);
    const Matrix m = gaussian_matrix(200, 100, s, rng);
    double sq = 0.0;
    for (const double v : m.values()) sq += v * v;
    EXPECT_NEAR(sq / 20000.0, s * s, 0.05 * s * s);
  }
}

TEST(GaussianMatrix, DeterministicAndValidated) {
  SeededRng a(5), b(5);
  EXPECT_EQ(gaussian_matrix(4, 3, 2.0, a), gaussian_matrix(4, 3, 2.0, b));
  EXPECT_THROW(gaussian_matrix(0, 3, 1.0, a), DimensionError);
  EXPECT_THROW(gaussian_matrix(3, 0, 1.0, a), DimensionError);
  EXPECT_THROW(gaussian_matrix(3, 3, -1.0, a), DomainError);
}

TEST(LoglogFit, ExactPowerLaws) {
  const ExponentFit inv = loglog_fit({{10, 0.1}, {100, 0.01}, {1000, 0.001}});
  EXPECT_NEAR(inv.slope, -1.0, 1e-12);
  EXPECT_NEAR(inv.r_squared, 1.0, 1e-12);
  EXPECT_EQ(inv.num_points, 3u);
  const ExponentFit root = loglog_fit({{4, 2}, {16, 4}, {64, 8}});
  EXPECT_NEAR(root.slope, 0.5, 1e-12);
  EXPECT_NEAR(root.r_squared, 1.0, 1e-12);
}

TEST(LoglogFit, FlatNoisySeriesMatchesClosedForm) {
  // OLS slope on (ln n, ln m) computed by hand: x = ln10·{1,2,3}.
  const ExponentFit fit = loglog_fit({{10, 2}, {100, 2.2}, {1000, 1.9}});
  const double expected = (std::log(1.9) - std::log(2.0)) / (2.0 * std::log(10.0));
  EXPECT_NEAR(fit.slope, expected, 1e-12);
  EXPECT_NEAR(fit.slope, 0.0, 0.05);
}

TEST(LoglogFit, RecoversAnyExponentAndPrefactor) {
  for (const double gamma : {-2.0, -1.0, -0.5, 0.0, 0.25, 1.0, 2.0}) {
    for (const double kappa : {1e-3, 0.7, 42.0}) {
      std::vector<std::pair<double, double>> pts;
      for (double n = 128; n <= 8192; n *= 2) pts.emplace_back(n, kappa * std::pow(n, gamma));
      const ExponentFit fit = loglog_fit(pts);
      EXPECT_NEAR(fit.slope, gamma, 1e-10);
      EXPECT_NEAR(fit.r_squared, 1.0, 1e-10);
      EXPECT_NEAR(fit.intercept, std::log(kappa), 1e-8);
    }
  }
}

TEST(LoglogFit, Errors) {
  EXPECT_THROW(loglog_fit({{10, 1.0}}), InsufficientDataError);
  EXPECT_THROW(loglog_fit({{10, 1.0}, {10, 2.0}}), InsufficientDataError);
  EXPECT_THROW(loglog_fit({{10, 1.0}, {0, 2.0}}), DomainError);
  EXPECT_THROW(loglog_fit({{10, 1.0}, {20, -2.0}}), DomainError);
}

TEST(LoglogFit, RSquaredInUnitInterval) {
  SeededRng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<double, double>> pts;
    for (double n = 2; n <= 64; n *= 2) pts.emplace_back(n, std::exp(rng.gaussian()));
    const ExponentFit fit = loglog_fit(pts);
    EXPECT_GE(fit.r_squared, 0.0);
    EXPECT_LE(fit.r_squared, 1.0);
  }
}
