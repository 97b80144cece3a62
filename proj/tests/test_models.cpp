// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "loraplus/checks.hpp"
#include "loraplus/models.hpp"

using namespace loraplus;

namespace {

ToyLinearModel linear(Vector w_star, Vector a, double b) {
  ToyLinearModel m;
  m.w_star = std::move(w_star);
  m.a = std::move(a);
  m.b = b;
  return m;
}

ToyMlpModel hand_mlp() {
  LoraAdapter ad;
  ad.config = {1, 1.0, InitScheme::Init1};
  ad.A = Matrix{{2, 3}};
  ad.B = Matrix{{1}, {0}};
  return ToyMlpModel(Matrix{{1}, {-1}}, Matrix{{1, 1}}, ad);
}

}  // namespace

TEST(Dataset, TargetsAreSineOfRowMean) {
  SeededRng rng(1);
  const Dataset data = gen_dataset(5, 1000, rng);
  EXPECT_EQ(data.size(), 1000u);
  EXPECT_EQ(data.dim(), 5u);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = data.inputs.row(i);
    double mean = 0.0;
    for (const double v : row) mean += v;
    EXPECT_EQ(data.targets[i], std::sin(mean / 5.0));
    EXPECT_LE(std::abs(data.targets[i]), 1.0);
  }
}

TEST(Dataset, ZeroRowHasZeroTarget) {
  SeededRng rng(2);
  const Dataset data = make_dataset(gaussian_matrix(3, 4, 0.0, rng));
  for (const double y : data.targets) EXPECT_EQ(y, 0.0);
}

TEST(Dataset, CsvRoundTrip) {
  SeededRng rng(3);
  const Dataset data = gen_dataset(3, 20, rng);
  std::stringstream ss;
  write_dataset_csv(ss, data);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "x_0,x_1,x_2,y");
  const Dataset back = read_dataset_csv(ss);
  EXPECT_EQ(back.inputs, data.inputs);
  EXPECT_EQ(back.targets, data.targets);
}

TEST(ToyLinear, ForwardHandValues) {
  EXPECT_EQ(toy_linear_forward(linear({1, -1}, {0, 0}, 1.0), Vector{2, 3}), -1.0);
  EXPECT_EQ(toy_linear_forward(linear({1, -1}, {4, 4}, 0.0), Vector{2, 3}), -1.0);
  EXPECT_EQ(toy_linear_forward(linear({0, 0}, {1, 1}, 1.0), Vector{2, 3}), 5.0);
  EXPECT_EQ(toy_linear_forward(linear({0, 0}, {7, -2}, 0.0), Vector{2, 3}), 0.0);
  EXPECT_THROW(toy_linear_forward(linear({0, 0}, {1, 1}, 1.0), Vector{2}), DimensionError);
}

TEST(ToyLinear, BackwardHandValues) {
  const LinearGrads g = toy_linear_backward(linear({0, 0}, {1, 1}, 1.0), Vector{2, 3}, 0.0);
  EXPECT_EQ(g.residual, 5.0);
  EXPECT_EQ(g.grad_b, 25.0);
  EXPECT_EQ(g.grad_a, (Vector{10, 15}));
}

TEST(ToyLinear, ZeroResidualAndZeroB) {
  const LinearGrads fit = toy_linear_backward(linear({0, 0}, {1, 1}, 1.0), Vector{2, 3}, 5.0);
  EXPECT_EQ(fit.grad_b, 0.0);
  EXPECT_EQ(fit.grad_a, (Vector{0, 0}));
  const LinearGrads saddle = toy_linear_backward(linear({1, 0}, {1, 2}, 0.0), Vector{2, 3}, 0.0);
  EXPECT_EQ(saddle.grad_a, (Vector{0, 0}));
  EXPECT_EQ(saddle.grad_b, 8.0 * 2.0);
}

TEST(ToyLinear, AnalysisModeInitHasZeroWStar) {
  SeededRng rng(4);
  const ToyLinearModel m = init_toy_linear(32, InitScheme::Init1, rng);
  EXPECT_EQ(m.w_star, Vector(32, 0.0));
  EXPECT_EQ(m.b, 0.0);
}

TEST(ToyLinear, FromAdapterRequiresRankOneUnitScale) {
  SeededRng rng(5);
  const LoraAdapter wide = init_adapter({2, 2.0, InitScheme::Init1}, 4, 1, rng);
  EXPECT_THROW(ToyLinearModel::from_adapter(wide, Vector(4, 0.0)), DimensionError);
  const LoraAdapter scaled = init_adapter({1, 2.0, InitScheme::Init1}, 4, 1, rng);
  EXPECT_THROW(ToyLinearModel::from_adapter(scaled, Vector(4, 0.0)), DomainError);
}

TEST(ToyMlp, ForwardHandValues) {
  const ToyMlpModel m = hand_mlp();
  const MlpForward f = mlp_forward(m, Vector{1});
  EXPECT_EQ(f.cache.h, (Vector{1, 0}));
  EXPECT_EQ(f.cache.z_a, (Vector{2}));
  EXPECT_EQ(f.cache.z_site, (Vector{2, 0}));
  EXPECT_EQ(f.output, 2.0);
}

TEST(ToyMlp, FreshPureSchemeAndZeroInputGiveZeroOutput) {
  SeededRng rng(6);
  for (const auto init : {MlpInit::Init1, MlpInit::Init2}) {
    const ToyMlpModel m = init_toy_mlp(5, 32, 4, 4.0, init, rng);
    EXPECT_EQ(mlp_forward(m, Vector{0.3, -1, 2, 0.1, 0.5}).output, 0.0);
  }
  const ToyMlpModel dense = init_toy_mlp(5, 32, 4, 4.0, MlpInit::Dense, rng);
  EXPECT_EQ(mlp_forward(dense, Vector(5, 0.0)).output, 0.0);
}

TEST(ToyMlp, BackwardRejectsStaleCache) {
  ToyMlpModel m = hand_mlp();
  const MlpForward f = mlp_forward(m, Vector{1});
  m.update_adapter([](Matrix& A, Matrix&) { A(0, 0) += 1.0; });
  EXPECT_THROW(mlp_backward(m, f.cache, 0.0), ConsistencyError);
}

TEST(ToyMlp, ShapeChangingUpdateIsRejected) {
  ToyMlpModel m = hand_mlp();
  EXPECT_THROW(m.update_adapter([](Matrix& A, Matrix&) { A = Matrix(2, 2); }), DimensionError);
}

TEST(ToyMlp, ZeroResidualGivesZeroGradients) {
  const ToyMlpModel m = hand_mlp();
  const MlpForward f = mlp_forward(m, Vector{1});
  const MlpGrads g = mlp_backward(m, f.cache, f.output);
  EXPECT_TRUE(g.grad_A.all_zero());
  EXPECT_TRUE(g.grad_B.all_zero());
}

TEST(ToyMlp, SingleSampleGradBIsRankOneOuterProduct) {
  SeededRng rng(7);
  const ToyMlpModel m = init_toy_mlp(5, 24, 4, 4.0, MlpInit::Dense, rng);
  const Vector x{0.5, -1.0, 0.3, 2.0, -0.7};
  const MlpForward f = mlp_forward(m, x);
  const MlpGrads g = mlp_backward(m, f.cache, 0.0);
  const Matrix expected = m.scale() * outer(g.d_site, f.cache.z_a);
  EXPECT_EQ(g.grad_B, expected);
  // Every 2x2 minor vanishes for a rank-1 matrix.
  for (std::size_t i = 0; i + 1 < g.grad_B.rows(); ++i) {
    for (std::size_t k = 0; k + 1 < g.grad_B.cols(); ++k) {
      const double minor =
          g.grad_B(i, k) * g.grad_B(i + 1, k + 1) - g.grad_B(i, k + 1) * g.grad_B(i + 1, k);
      EXPECT_NEAR(minor, 0.0, 1e-12 * (1.0 + norm_inf(g.grad_B) * norm_inf(g.grad_B)));
    }
  }
}

TEST(ToyMlp, BatchGradientMatchesPerSampleMean) {
  SeededRng rng(8);
  const ToyMlpModel m = init_toy_mlp(4, 16, 3, 3.0, MlpInit::Dense, rng);
  const Dataset data = gen_dataset(4, 5, rng);
  const MlpBatchResult batch = mlp_batch_gradients(m, hidden_matrix(m, data), data.targets);
  Matrix gA(3, 16), gB(16, 3);
  double loss = 0.0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const Vector x(data.inputs.row(s).begin(), data.inputs.row(s).end());
    const MlpForward f = mlp_forward(m, x);
    const MlpGrads g = mlp_backward(m, f.cache, data.targets[s]);
    loss += 0.5 * g.residual * g.residual / 5.0;
    gA = gA + (1.0 / 5.0) * g.grad_A;
    gB = gB + (1.0 / 5.0) * g.grad_B;
  }
  EXPECT_NEAR(batch.loss, loss, 1e-14);
  EXPECT_LE(norm_inf(batch.grad_A - gA), 1e-13 * (1.0 + norm_inf(gA)));
  EXPECT_LE(norm_inf(batch.grad_B - gB), 1e-13 * (1.0 + norm_inf(gB)));
}

TEST(ToyMlp, PositivelyHomogeneousInB) {
  SeededRng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    ToyMlpModel m = init_toy_mlp(3, 6, 2, 2.0, MlpInit::Dense, rng);
    const Vector x{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    const MlpForward f = mlp_forward(m, x);
    if (!std::all_of(f.cache.z_site.begin(), f.cache.z_site.end(), [](double v) { return v > 0.0; })) continue;
    m.update_adapter([](Matrix&, Matrix& B) { B = 2.5 * B; });
    EXPECT_NEAR(mlp_forward(m, x).output, 2.5 * f.output, 1e-12 * (1.0 + std::abs(f.output)));
    return;
  }
  GTEST_SKIP() << "no all-positive instance drawn";
}

TEST(ToyMlp, FrozenWeightsUntouchedByTraining) {
  RunConfig c = default_config(ExperimentKind::LrGrid);
  c.train_size = 50;
  c.test_size = 10;
  c.steps = 20;
  const TrainProblem before = make_problem(c, 3);
  TrainProblem after = make_problem(c, 3);
  const Matrix h = hidden_matrix(after.model, after.train);
  for (int t = 0; t < 20; ++t) {
    const MlpBatchResult g = mlp_batch_gradients(after.model, h, after.train.targets);
    after.model.update_adapter([&](Matrix& A, Matrix& B) {
      first_order_step(A, g.grad_A, B, g.grad_B, ParamGroups(0.05, 0.5), GradientProcessor::Identity);
    });
  }
  EXPECT_EQ(after.model.w_in(), before.model.w_in());
  EXPECT_EQ(after.model.w_out(), before.model.w_out());
  EXPECT_FALSE(after.model.adapter().B == before.model.adapter().B);
}

TEST(BatchLoss, HandValuesAndErrors) {
  ToyLinearModel m = linear({0, 0}, {0, 0}, 0.0);
  Dataset zero = make_dataset(Matrix(2, 2));
  EXPECT_EQ(batch_loss(m, zero), 0.0);
  Dataset two;
  two.inputs = Matrix(2, 2);
  two.targets = {1.0, 3.0};
  EXPECT_EQ(batch_loss(m, two), 2.5);
  Dataset empty;
  EXPECT_THROW(batch_loss(m, empty), DomainError);
}

TEST(GradientCheck, LinearFiftyConfigurations) {
  for (std::uint64_t s = 0; s < 50; ++s) EXPECT_LE(gradient_check_linear(s), 1e-6) << "seed " << s;
}

TEST(GradientCheck, MlpFiftyConfigurations) {
  for (std::uint64_t s = 0; s < 50; ++s) EXPECT_LE(gradient_check_mlp(s), 1e-6) << "seed " << s;
}

TEST(GradientCheck, DetectsWrongGradient) {
  EXPECT_GT(gradient_relative_error(Vector{1.0, 2.0}, Vector{1.0, 2.1}), 1e-2);
  EXPECT_EQ(gradient_relative_error(Vector{0.0}, Vector{0.0}), 0.0);
}
