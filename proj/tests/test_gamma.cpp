// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "loraplus/checks.hpp"
#include "loraplus/gamma.hpp"

using namespace loraplus;

namespace {

const Exponent kHalf(1, 2);
const Exponent kMinusHalf(-1, 2);

}  // namespace

TEST(Exponent, ExactRationalArithmetic) {
  EXPECT_EQ(Exponent(2, 4), kHalf);
  EXPECT_EQ(Exponent(1, -2), kMinusHalf);
  EXPECT_EQ(kHalf + kHalf, Exponent(1));
  EXPECT_EQ(Exponent(1, 3) - kHalf, Exponent(-1, 6));
  EXPECT_EQ(Exponent(2, 3) * Exponent(3, 4), kHalf);
  EXPECT_EQ(Exponent(1) / Exponent(3), Exponent(1, 3));
  EXPECT_LT(kMinusHalf, Exponent(0));
  EXPECT_EQ(kMinusHalf.str(), "-1/2");
  EXPECT_EQ(Exponent(3).str(), "3");
  EXPECT_THROW(Exponent(1, 0), DomainError);
  EXPECT_THROW(Exponent(1) / Exponent(0), DomainError);
}

TEST(GammaOp, AddIsMaxMulIsSum) {
  EXPECT_EQ(gamma_op(GammaOpKind::Add, 2, 3), Exponent(3));
  EXPECT_EQ(gamma_op(GammaOpKind::Mul, kMinusHalf, 1), kHalf);
  EXPECT_EQ(gamma_op(GammaOpKind::Mul, -1, kSquaredNormExponent), Exponent(0));
}

TEST(GdRecursion, SharedInit1) {
  const auto traj = run_gd_recursion(DynamicsSetting::shared(OptimizerFamily::GdShared, InitScheme::Init1, kMinusHalf));
  for (const auto& s : traj.steps) {
    EXPECT_EQ(s.state_b, kMinusHalf) << "t=" << s.t;
    EXPECT_EQ(s.state_a, Exponent(0));
    EXPECT_EQ(s.output, kMinusHalf);
  }
}

TEST(GdRecursion, SharedInit2OutputIsHalf) {
  const auto traj = run_gd_recursion(DynamicsSetting::shared(OptimizerFamily::GdShared, InitScheme::Init2, kMinusHalf));
  EXPECT_EQ(traj.at(1).state_a, kHalf);
  for (int t = 2; t <= 10; ++t) {
    EXPECT_EQ(traj.at(t).output, kHalf);
    EXPECT_EQ(traj.at(t).state_a, kHalf);
  }
}

TEST(GdRecursion, DecoupledIsEfficientForBothSchemes) {
  for (const auto scheme : {InitScheme::Init1, InitScheme::Init2}) {
    const auto traj = run_gd_recursion({OptimizerFamily::GdDecoupled, scheme, -1, 0, 10});
    EXPECT_FALSE(traj.at(1).delta1.has_value());
    for (int t = 2; t <= 10; ++t) {
      const auto& s = traj.at(t);
      EXPECT_EQ(s.state_b, Exponent(0));
      EXPECT_EQ(s.state_a, Exponent(0));
      EXPECT_EQ(s.output, Exponent(0));
      EXPECT_EQ(*s.delta1, Exponent(0));
      EXPECT_EQ(*s.delta2, Exponent(0));
      EXPECT_EQ(*s.delta3, Exponent(0));
    }
  }
}

TEST(AdamRecursion, SharedHalfViolatesStability) {
  const auto traj =
      run_adam_recursion(DynamicsSetting::shared(OptimizerFamily::AdamShared, InitScheme::Init1, kMinusHalf));
  EXPECT_EQ(traj.at(2).state_a, kHalf);
  EXPECT_FALSE(traj.at(2).stable);
}

TEST(AdamRecursion, DecoupledMinusOneZero) {
  const auto traj = run_adam_recursion({OptimizerFamily::AdamDecoupled, InitScheme::Init1, -1, 0, 10});
  for (int t = 2; t <= 10; ++t) {
    EXPECT_EQ(traj.at(t).state_b, Exponent(0));
    EXPECT_EQ(traj.at(t).state_a, Exponent(0));
    EXPECT_EQ(*traj.at(t).delta1, Exponent(0));
    EXPECT_EQ(*traj.at(t).delta2, Exponent(0));
    EXPECT_EQ(*traj.at(t).delta3, Exponent(0));
    EXPECT_TRUE(traj.at(t).stable);
  }
}

TEST(AdamRecursion, SmallEtaAIsStableButInefficient) {
  const auto traj = run_adam_recursion({OptimizerFamily::AdamDecoupled, InitScheme::Init1, -2, 0, 10});
  EXPECT_EQ(*traj.at(3).delta1, Exponent(-1));
  EXPECT_TRUE(traj.at(3).stable);
}

TEST(Recursion, FixedPointByStepThree) {
  for (const auto fam : {OptimizerFamily::GdShared, OptimizerFamily::GdDecoupled, OptimizerFamily::AdamShared,
                         OptimizerFamily::AdamDecoupled}) {
    for (const auto scheme : {InitScheme::Init1, InitScheme::Init2}) {
      for (const auto& c : {std::pair<Exponent, Exponent>{kMinusHalf, kMinusHalf}, {-1, 0}, {-2, 1}, {0, -1}}) {
        if (is_shared(fam) && c.first != c.second) continue;
        const auto traj = run_recursion({fam, scheme, c.first, c.second, 10});
        EXPECT_LE(traj.fixed_point_step(), 3) << to_string(fam) << ' ' << to_string(scheme);
      }
    }
  }
}

TEST(Recursion, ValidatesSetting) {
  EXPECT_THROW(run_gd_recursion({OptimizerFamily::GdShared, InitScheme::Init1, -1, 0, 10}), DomainError);
  EXPECT_THROW(run_gd_recursion({OptimizerFamily::GdDecoupled, InitScheme::Init1, -1, 0, 1}), DomainError);
}

TEST(LinearSystem, UniqueUnderdeterminedInconsistent) {
  const auto unique = solve_linear_system({{{1, 1}, 3, "x+y=3"}, {{1, -1}, 1, "x-y=1"}}, 2);
  ASSERT_EQ(unique.status, SolveStatus::Unique);
  EXPECT_EQ(unique.values[0], Exponent(2));
  EXPECT_EQ(unique.values[1], Exponent(1));
  EXPECT_EQ(solve_linear_system({{{1, 1}, 3, ""}}, 2).status, SolveStatus::Underdetermined);
  EXPECT_EQ(solve_linear_system({{{1, 1}, 3, ""}, {{2, 2}, 5, ""}}, 2).status, SolveStatus::Inconsistent);
  const auto third = solve_linear_system({{{3}, 1, ""}}, 1);
  EXPECT_EQ(third.values[0], Exponent(1, 3));
}

TEST(SolveEfficiency, GdSharedInfeasibleWithOutputWitness) {
  for (const auto& [scheme, value] : {std::pair{InitScheme::Init1, kMinusHalf}, std::pair{InitScheme::Init2, kHalf}}) {
    const auto sol = solve_efficiency(OptimizerFamily::GdShared, scheme);
    EXPECT_EQ(sol.lr_a, kMinusHalf);
    EXPECT_EQ(sol.lr_b, kMinusHalf);
    EXPECT_FALSE(sol.feasible);
    ASSERT_TRUE(sol.witness.has_value());
    EXPECT_EQ(sol.witness->quantity, "g[f_t]");
    EXPECT_EQ(sol.witness->value, value);
  }
}

TEST(SolveEfficiency, DecoupledFamiliesFeasibleAtMinusOneZero) {
  for (const auto fam : {OptimizerFamily::GdDecoupled, OptimizerFamily::AdamDecoupled}) {
    for (const auto scheme : {InitScheme::Init1, InitScheme::Init2}) {
      const auto sol = solve_efficiency(fam, scheme);
      EXPECT_TRUE(sol.used_ansatz);
      EXPECT_EQ(sol.lr_a, Exponent(-1));
      EXPECT_EQ(sol.lr_b, Exponent(0));
      EXPECT_EQ(sol.lr_sum, Exponent(-1));
      EXPECT_TRUE(sol.feasible);
      for (int t = 2; t <= 10; ++t) {
        const auto& s = sol.replay.at(t);
        EXPECT_EQ(s.output, Exponent(0));
        EXPECT_EQ(*s.delta1, Exponent(0));
        EXPECT_EQ(*s.delta2, Exponent(0));
        EXPECT_EQ(*s.delta3, Exponent(0));
      }
    }
  }
}

TEST(SolveEfficiency, AdamSharedStabilityWitness) {
  const auto sol = solve_efficiency(OptimizerFamily::AdamShared, InitScheme::Init1);
  EXPECT_EQ(sol.lr_a, kMinusHalf);
  EXPECT_FALSE(sol.feasible);
  ASSERT_TRUE(sol.witness.has_value());
  EXPECT_EQ(sol.witness->quantity, "g[A_t Z]");
  EXPECT_EQ(sol.witness->value, kHalf);
}

TEST(SolveEfficiency, AllExpectationsHold) { EXPECT_EQ(symbolic_mismatches(), ""); }

TEST(Derivation, TextNamesCandidateAndVerdict) {
  const std::string shared = derivation_text(solve_efficiency(OptimizerFamily::GdShared, InitScheme::Init1));
  EXPECT_NE(shared.find("candidate: c = -1/2"), std::string::npos);
  EXPECT_NE(shared.find("INFEASIBLE, witness g[f_t] = -1/2"), std::string::npos);
  const std::string adam = derivation_text(solve_efficiency(OptimizerFamily::AdamDecoupled, InitScheme::Init1));
  EXPECT_NE(adam.find("(g[eta_A], g[eta_B]) = (-1, 0)"), std::string::npos);
  EXPECT_NE(adam.find("FEASIBLE"), std::string::npos);
  const std::string gd2 = derivation_text(solve_efficiency(OptimizerFamily::GdDecoupled, InitScheme::Init2));
  EXPECT_NE(gd2.find("(c_a, c_b) = (-1, 0)"), std::string::npos);
}

TEST(Family, ParseNames) {
  EXPECT_EQ(parse_family("adam-shared"), OptimizerFamily::AdamShared);
  EXPECT_THROW(parse_family("gd"), ConfigError);
}
