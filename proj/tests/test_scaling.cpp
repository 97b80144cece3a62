// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "loraplus/checks.hpp"
#include "loraplus/scaling.hpp"

using namespace loraplus;

namespace {

ToyLinearModel unit_model() {
  ToyLinearModel m;
  m.w_star = {0, 0};
  m.a = {1, 0};
  m.b = 1.0;
  return m;
}

ToyLinearModel gd_step(ToyLinearModel m, const Vector& x, double y, const ParamGroups& g) {
  const LinearGrads grads = toy_linear_backward(m, x, y);
  first_order_step(m.a, grads.grad_a, m.b, grads.grad_b, g, GradientProcessor::Identity);
  return m;
}

SweepSpec small_linear_spec() {
  SweepSpec s;
  s.rule = {-1, 0, 0.25, 0.25};
  s.widths = {64, 128, 256, 512};
  s.seeds = {0, 1, 2, 3};
  return s;
}

}  // namespace

TEST(DeltaTermsLinear, HandExample) {
  const ToyLinearModel before = unit_model();
  const Vector x{1, 0};
  const ParamGroups g(0.1, 0.1);
  const ToyLinearModel after = gd_step(before, x, 0.0, g);
  EXPECT_DOUBLE_EQ(toy_linear_forward(after, x), 0.81);
  const DeltaTerms d = delta_terms_linear(before, after, x, 0.0, g);
  EXPECT_DOUBLE_EQ(d.delta1, 0.1);
  EXPECT_DOUBLE_EQ(d.delta2, 0.1);
  EXPECT_DOUBLE_EQ(d.delta3, 0.01);
  EXPECT_NEAR(d.delta_f, -0.19, 1e-15);
}

TEST(DeltaTermsLinear, VanishingFactors) {
  const Vector x{1, 0};
  const ParamGroups g(0.1, 0.2);
  ToyLinearModel zero_b = unit_model();
  zero_b.b = 0.0;
  zero_b.w_star = {0.5, 0};
  const DeltaTerms d1 = delta_terms_linear(zero_b, gd_step(zero_b, x, 0.0, g), x, 0.0, g);
  EXPECT_EQ(d1.delta1, 0.0);
  EXPECT_EQ(d1.delta3, 0.0);
  ToyLinearModel orth = unit_model();
  orth.a = {0, 1};
  orth.w_star = {0.5, 0};
  const DeltaTerms d2 = delta_terms_linear(orth, gd_step(orth, x, 0.0, g), x, 0.0, g);
  EXPECT_EQ(d2.delta2, 0.0);
  EXPECT_EQ(d2.delta3, 0.0);
}

TEST(DeltaTermsLinear, NonGradientStepIsRejected) {
  const ToyLinearModel before = unit_model();
  ToyLinearModel after = before;
  after.b = 0.5;
  EXPECT_THROW(delta_terms_linear(before, after, Vector{1, 0}, 0.0, ParamGroups(0.1, 0.1)), ConsistencyError);
}

TEST(DeltaTermsLinear, IdentityHoldsOnRandomTrajectories) { EXPECT_EQ(linear_identity_violations(200, 5), 0u); }

TEST(DeltaTermsLora, TrivialAndRandom) {
  const Matrix B{{1, 2}, {3, 4}};
  const Vector z{0.5, -1};
  const LoraDeltaTerms same = delta_terms_lora(B, z, B, z);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(same.delta1[i], 0.0);
    EXPECT_EQ(same.delta2[i], 0.0);
    EXPECT_EQ(same.delta3[i], 0.0);
    EXPECT_EQ(same.delta_zb[i], 0.0);
  }
  const LoraDeltaTerms only_z = delta_terms_lora(B, z, B, Vector{1.5, -1});
  EXPECT_EQ(only_z.delta1, (Vector{1, 3}));
  EXPECT_EQ(only_z.magnitude2(), 0.0);
  EXPECT_EQ(lora_identity_violations(200, 5), 0u);
}

TEST(DeltaTermsLora, ShapeMismatch) {
  EXPECT_THROW(delta_terms_lora(Matrix(2, 2), Vector(2), Matrix(2, 3), Vector(2)), DimensionError);
  EXPECT_THROW(delta_terms_lora(Matrix(2, 2), Vector(3), Matrix(2, 2), Vector(2)), DimensionError);
}

TEST(EstimateGamma, RecoversInjectedPowerLaw) {
  SweepSpec spec = small_linear_spec();
  WidthSweepReport report(spec);
  const std::size_t q = report.quantity_index("f");
  for (std::size_t w = 0; w < spec.widths.size(); ++w) {
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
      SweepCell& c = report.cell(w, s);
      c.steps_completed = spec.steps;
      c.values.assign(report.quantities().size(), Vector(static_cast<std::size_t>(spec.steps), 1.0));
      c.values[q][1] = (1.0 + 0.1 * static_cast<double>(s)) / static_cast<double>(spec.widths[w]);
    }
  }
  const ExponentFit fit = estimate_gamma(report, "f", 2);
  EXPECT_NEAR(fit.slope, -1.0, 1e-10);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
  EXPECT_NEAR(estimate_gamma(report, "f", 1).slope, 0.0, 1e-12);
}

TEST(EstimateGamma, NeedsThreeValidWidths) {
  SweepSpec spec = small_linear_spec();
  WidthSweepReport report(spec);
  for (std::size_t w = 0; w < spec.widths.size(); ++w) {
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
      SweepCell& c = report.cell(w, s);
      c.values.assign(report.quantities().size(), Vector(3, 1.0));
      c.diverged = w >= 2;
    }
  }
  EXPECT_FALSE(report.mean_magnitude("f", 3, 2).has_value());
  EXPECT_THROW(estimate_gamma(report, "f", 2), InsufficientDataError);
  EXPECT_THROW((void)report.quantity_index("loss"), ConfigError);
}

TEST(WidthSweep, SpecValidation) {
  SweepSpec s = small_linear_spec();
  s.widths = {128, 64, 256};
  EXPECT_THROW(run_width_sweep(s), DomainError);
  s = small_linear_spec();
  s.seeds.clear();
  EXPECT_THROW(run_width_sweep(s), DomainError);
  s = small_linear_spec();
  s.steps = 2;
  EXPECT_THROW(run_width_sweep(s), DomainError);
  s = small_linear_spec();
  s.processor = GradientProcessor::Adam;
  EXPECT_THROW(run_width_sweep(s), DomainError);
}

TEST(WidthSweep, EfficientRuleIsWidthInvariant) {
  const WidthSweepReport report = run_width_sweep(small_linear_spec());
  for (const char* q : {"f", "delta1", "delta2", "delta3"}) {
    for (int t = 2; t <= 3; ++t) EXPECT_NEAR(estimate_gamma(report, q, t).slope, 0.0, 0.05) << q << " t=" << t;
  }
}

TEST(WidthSweep, SharedRuleOutputDecaysLikeInverseRootWidth) {
  SweepSpec s = small_linear_spec();
  s.rule = LrRule::shared(Exponent(-1, 2), 0.25);
  s.widths = {128, 256, 512, 1024, 2048};
  s.seeds = {0, 1, 2, 3, 4, 5, 6, 7};
  const WidthSweepReport report = run_width_sweep(s);
  EXPECT_NEAR(estimate_gamma(report, "f", 2).slope, -0.5, 0.1);
}

TEST(WidthSweep, DivergenceFlaggedPerCell) {
  SweepSpec s = small_linear_spec();
  s.rule = {0, 1, 1.0, 1.0};  // η_b grows with width
  s.steps = 8;
  s.widths = {2, 4, 8, 4096};
  const WidthSweepReport report = run_width_sweep(s);
  bool any = false;
  for (std::size_t seed = 0; seed < s.seeds.size(); ++seed) any = any || report.cell(3, seed).diverged;
  EXPECT_TRUE(any);
  std::ostringstream csv;
  report.write_csv(csv);
  EXPECT_NE(csv.str().find(",1\n"), std::string::npos);
}

TEST(WidthSweep, AllDivergedThrows) {
  SweepSpec s = small_linear_spec();
  s.rule = {3, 3, 1.0, 1.0};
  s.steps = 10;
  EXPECT_THROW(run_width_sweep(s), DivergenceError);
}

TEST(WidthSweep, WorkerCountDoesNotChangeOutput) {
  for (const SweepModel model : {SweepModel::Linear, SweepModel::Mlp}) {
    SweepSpec s = small_linear_spec();
    s.model = model;
    if (model == SweepModel::Mlp) {
      s.processor = GradientProcessor::Sign;
      s.rule = {-1, 0, 0.01, 0.01};
    }
    std::ostringstream serial, threaded;
    run_width_sweep(s).write_csv(serial);
    s.workers = 4;
    run_width_sweep(s).write_csv(threaded);
    EXPECT_EQ(serial.str(), threaded.str());
  }
}

TEST(Alignment, HandExample) {
  const Vector S{2, -1}, z{3, -4, 0};
  const AlignmentReport rep = signsgd_alignment_check(outer(S, z), S, z);
  EXPECT_TRUE(rep.holds());
  EXPECT_FALSE(rep.degenerate);
  EXPECT_EQ(rep.product, (Vector{7, -7}));
  EXPECT_EQ(rep.magnitude, 7.0);
}

TEST(Alignment, ZeroInputIsDegenerate) {
  const Vector S{1, -3}, z{0, 0};
  const AlignmentReport rep = signsgd_alignment_check(outer(S, z), S, z);
  EXPECT_TRUE(rep.degenerate);
  EXPECT_TRUE(rep.holds());
  EXPECT_EQ(rep.magnitude, 0.0);
}

TEST(Alignment, RejectsNonRankOneGradient) {
  const Vector S{1, 2}, z{1, 1};
  Matrix g = outer(S, z);
  g(1, 1) += 1.0;
  EXPECT_THROW(signsgd_alignment_check(g, S, z), DomainError);
}

TEST(Alignment, SignAtZeroMustBeZero) {
  EXPECT_EQ(alignment_identity_violations(100), 0u);
  EXPECT_GT(alignment_identity_violations(100, SignConvention{1.0}), 0u);
}

TEST(Alignment, MagnitudeGrowsLinearlyInWidth) {
  const AlignmentSweep sweep = alignment_sweep({128, 256, 512, 1024, 2048}, {0, 1, 2, 3, 4, 5, 6, 7}, 4);
  EXPECT_TRUE(sweep.identities_hold);
  EXPECT_NEAR(sweep.fit.slope, 1.0, 0.1);
}

TEST(Linearization, ZeroResidualIsDegenerate) {
  LinearizationInstance inst = linearization_instance(1);
  const double y = mlp_forward(inst.model, inst.x).output;
  const double shrinks[] = {1e-2, 1e-4};
  for (const auto& p : loss_linearization_check(inst.model, inst.x, y, ParamGroups::shared(0.1), shrinks)) {
    EXPECT_TRUE(p.degenerate);
    EXPECT_TRUE(std::isnan(p.ratio));
  }
}

TEST(Linearization, RemainderIsLinearInShrink) {
  const double shrinks[] = {1e-2, 1e-3, 1e-4};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const LinearizationInstance inst = linearization_instance(seed);
    const auto pts = loss_linearization_check(inst.model, inst.x, inst.y, ParamGroups::shared(0.1), shrinks);
    ASSERT_EQ(pts.size(), 3u);
    for (const auto& p : pts) ASSERT_FALSE(p.degenerate);
    EXPECT_NEAR(pts[2].ratio, 1.0, 0.01);
    const double d0 = std::abs(pts[0].ratio - 1.0), d1 = std::abs(pts[1].ratio - 1.0);
    EXPECT_GT(d0, d1);
    EXPECT_NEAR(d0 / d1, 10.0, 1.0);
  }
}

TEST(Linearization, RejectsNonPositiveShrink) {
  const LinearizationInstance inst = linearization_instance(0);
  const double shrinks[] = {0.0};
  EXPECT_THROW(loss_linearization_check(inst.model, inst.x, inst.y, ParamGroups::shared(0.1), shrinks), DomainError);
}
