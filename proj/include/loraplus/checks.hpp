// SPDX-License-Identifier: Apache-2.0
#pragma once

// Self-check suite: gradient checks, exact identities, symbolic solutions,
// width-sweep verdict and baseline equivalence. Shared by the CLI `check`
// command and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "loraplus/experiments.hpp"

namespace loraplus {

// ---------------------------------------------------------------------------
// Finite-difference gradient checks.

inline constexpr double kFiniteDifferenceStep = 1e-6;

/// ‖g − g_fd‖∞ / max(‖g‖∞, ‖g_fd‖∞).
inline double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  require_length(numeric.size(), analytic.size(), "gradient_relative_error");
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
  const double scale = std::max({norm_inf(analytic), norm_inf(numeric), std::numeric_limits<double>::min()});
  return diff / scale;
}

namespace detail {

template <class Loss>
Vector central_differences(std::span<double> params, Loss&& loss) {
  Vector out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + kFiniteDifferenceStep;
    const double up = loss();
    params[i] = keep - kFiniteDifferenceStep;
    const double down = loss();
    params[i] = keep;
    out[i] = (up - down) / (2.0 * kFiniteDifferenceStep);
  }
  return out;
}

}  // namespace detail

/// Random toy linear instance (width 2..16, nonzero W*); returns the relative error
/// over the stacked gradient (a, b).
inline double gradient_check_linear(std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).derive(0x11);
  const std::size_t n = 2 + static_cast<std::size_t>(rng.next_u64() % 15);
  ToyLinearModel m;
  m.w_star.resize(n);
  m.a.resize(n);
  Vector x(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.w_star[i] = rng.gaussian();
    m.a[i] = rng.gaussian();
    x[i] = rng.gaussian();
  }
  m.b = rng.gaussian();
  const double y = rng.gaussian();
  const LinearGrads g = toy_linear_backward(m, x, y);
  auto loss = [&] {
    const double u = toy_linear_forward(m, x) - y;
    return 0.5 * u * u;
  };
  Vector analytic = g.grad_a;
  analytic.push_back(g.grad_b);
  Vector numeric = detail::central_differences(m.a, loss);
  numeric.push_back(detail::central_differences(std::span<double>(&m.b, 1), loss)[0]);
  return gradient_relative_error(analytic, numeric);
}

/// Minimum |adapter-site pre-activation| a random instance must keep so that a
/// finite-difference perturbation cannot cross a ReLU kink.
inline constexpr double kKinkMargin = 1e-3;

/// Random toy MLP instance (d 2..6, n 4..16, r 1..4, batch of 3), redrawn until every
/// site pre-activation clears the kink margin; relative error over the stacked (A, B) gradient.
inline double gradient_check_mlp(std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    SeededRng rng = SeededRng(seed).derive(0x22 + (attempt << 8));
    const std::size_t d = 2 + rng.next_u64() % 5;
    const std::size_t n = 4 + rng.next_u64() % 13;
    const std::size_t r = 1 + rng.next_u64() % 4;
    const double alpha = 0.5 + 3.5 * rng.uniform();
    ToyMlpModel model = init_toy_mlp(d, n, r, alpha, MlpInit::Dense, rng);
    const Dataset data = gen_dataset(d, 3, rng);
    const Matrix hidden = hidden_matrix(model, data);
    bool near_kink = false;
    for (std::size_t s = 0; s < data.size() && !near_kink; ++s) {
      const Vector row(hidden.row(s).begin(), hidden.row(s).end());
      for (const double v : mlp_forward_hidden(model, row).cache.z_site) near_kink |= std::abs(v) < kKinkMargin;
    }
    if (near_kink) continue;
    const MlpBatchResult g = mlp_batch_gradients(model, hidden, data.targets, true);
    LoraAdapter adapter = model.adapter();
    auto loss = [&] {
      model.set_adapter(adapter);
      return mlp_batch_gradients(model, hidden, data.targets, false).loss;
    };
    Vector analytic(g.grad_A.values().begin(), g.grad_A.values().end());
    analytic.insert(analytic.end(), g.grad_B.values().begin(), g.grad_B.values().end());
    Vector numeric = detail::central_differences(adapter.A.values(), loss);
    const Vector nb = detail::central_differences(adapter.B.values(), loss);
    numeric.insert(numeric.end(), nb.begin(), nb.end());
    return gradient_relative_error(analytic, numeric);
  }
}

// ---------------------------------------------------------------------------
// Exact identities.

/// Runs `steps` GD steps on `count` random linear instances, verifying the
/// decomposition each step; returns the number of violations.
inline std::size_t linear_identity_violations(std::size_t count, int steps, std::uint64_t seed = 0) {
  std::size_t violations = 0;
  for (std::size_t k = 0; k < count; ++k) {
    SeededRng rng = SeededRng(seed).derive(k);
    const std::size_t n = 1 + rng.next_u64() % 64;
    ToyLinearModel m;
    m.w_star.resize(n);
    m.a.resize(n);
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) {
      m.w_star[i] = 0.3 * rng.gaussian();
      m.a[i] = rng.gaussian() / std::sqrt(static_cast<double>(n));
      x[i] = rng.gaussian();
    }
    m.b = rng.gaussian();
    const double y = rng.gaussian();
    const ParamGroups groups(0.05 * rng.uniform() / static_cast<double>(n), 0.05 * rng.uniform() + 1e-3);
    for (int t = 0; t < steps; ++t) {
      const ToyLinearModel before = m;
      const LinearGrads g = toy_linear_backward(m, x, y);
      first_order_step(m.a, g.grad_a, m.b, g.grad_b, groups, GradientProcessor::Identity);
      try {
        (void)delta_terms_linear(before, m, x, y, groups);
      } catch (const ConsistencyError&) {
        ++violations;
      }
    }
  }
  return violations;
}

/// Same for ΔZ_B = δ¹ + δ² + δ³ on random toy MLP GD steps.
inline std::size_t lora_identity_violations(std::size_t count, int steps, std::uint64_t seed = 0) {
  std::size_t violations = 0;
  for (std::size_t k = 0; k < count; ++k) {
    SeededRng rng = SeededRng(seed).derive(0x1000 + k);
    const std::size_t n = 4 + rng.next_u64() % 61;
    ToyMlpModel model = init_toy_mlp(5, n, 4, 4.0, MlpInit::Dense, rng);
    Vector x(5);
    for (double& v : x) v = rng.gaussian();
    const double y = sine_of_mean(x);
    const Vector h = hidden_features(model, x);
    const ParamGroups groups(0.1 / static_cast<double>(n), 0.1);
    for (int t = 0; t < steps; ++t) {
      const MlpForward fwd = mlp_forward_hidden(model, h);
      const MlpGrads g = mlp_backward(model, fwd.cache, y);
      const Matrix B_prev = model.adapter().B;
      model.update_adapter([&](Matrix& A, Matrix& B) {
        first_order_step(A, g.grad_A, B, g.grad_B, groups, GradientProcessor::Identity);
      });
      try {
        (void)delta_terms_lora(B_prev, fwd.cache.z_a, model.adapter().B, lora_features(model.adapter(), h).z_a);
      } catch (const ConsistencyError&) {
        ++violations;
      }
    }
  }
  return violations;
}

/// Checks the SignSGD factorization and product identity on `count` random (S, z)
/// drawn from small integers, so zero entries occur in both S and z.
inline std::size_t alignment_identity_violations(std::size_t count, SignConvention sign = {},
                                                 std::uint64_t seed = 0) {
  std::size_t violations = 0;
  for (std::size_t k = 0; k < count; ++k) {
    SeededRng rng = SeededRng(seed).derive(0x2000 + k);
    const std::size_t r = 1 + rng.next_u64() % 6;
    const std::size_t n = 1 + rng.next_u64() % 40;
    Vector S(r), z(n);
    for (double& v : S) v = static_cast<double>(static_cast<int>(rng.next_u64() % 5) - 2);
    for (double& v : z) v = static_cast<double>(static_cast<int>(rng.next_u64() % 5) - 2) * (0.5 + rng.uniform());
    if (!signsgd_alignment_check(outer(S, z), S, z, sign).holds()) ++violations;
  }
  return violations;
}

// ---------------------------------------------------------------------------
// Baseline equivalence.

/// Trains the same seed with shared η and with λ = 1 groups; true when every
/// recorded loss and the final adapter agree bit for bit.
inline bool baseline_equivalent(const RunConfig& c, double eta, std::uint64_t seed) {
  const TrainResult shared = train_toy_mlp(c, ParamGroups::shared(eta), seed);
  const TrainResult grouped = train_toy_mlp(c, loraplus_groups(eta, 1.0, RatioPolicy::Baseline), seed);
  if (shared.diverged != grouped.diverged || shared.curve.size() != grouped.curve.size()) return false;
  for (std::size_t i = 0; i < shared.curve.size(); ++i) {
    if (shared.curve[i].train_loss != grouped.curve[i].train_loss ||
        shared.curve[i].test_loss != grouped.curve[i].test_loss) {
      return false;
    }
  }
  return shared.adapter.A == grouped.adapter.A && shared.adapter.B == grouped.adapter.B;
}

// ---------------------------------------------------------------------------
// Loss linearization instances.

struct LinearizationInstance {
  ToyMlpModel model;
  Vector x;
  double y = 0.0;
};

/// Small dense-init MLP (d = 5, n = 16, r = 4) whose site pre-activations all clear
/// `margin`, so a shrunken step stays on one linear piece of every ReLU.
inline LinearizationInstance linearization_instance(std::uint64_t seed, double margin = 0.05) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    SeededRng rng = SeededRng(seed).derive(0x3000 + (attempt << 8));
    ToyMlpModel model = init_toy_mlp(5, 16, 4, 4.0, MlpInit::Dense, rng);
    Vector x(5);
    for (double& v : x) v = rng.gaussian();
    const auto fwd = mlp_forward(model, x);
    const bool clear = std::all_of(fwd.cache.z_site.begin(), fwd.cache.z_site.end(),
                                   [&](double v) { return std::abs(v) >= margin; });
    const double y = fwd.output + 1.0 + rng.gaussian() * 0.1;  // residual near −1
    if (clear) return {std::move(model), std::move(x), y};
  }
}

// ---------------------------------------------------------------------------
// Suite.

struct CheckOptions {
  SignConvention sign;         // fault injection: sign(0) = +1 breaks the alignment identity
  bool swap_lr_groups = false; // fault injection: swapped (η_A, η_B) breaks the prop32 verdict
  std::size_t workers = 1;
};

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SymbolicExpectation {
  OptimizerFamily family;
  InitScheme scheme;
  Exponent lr_a;
  Exponent lr_b;
  bool feasible;
  std::string witness_quantity;  // empty when feasible
  Exponent witness_value;
};

inline const std::vector<SymbolicExpectation>& symbolic_expectations() {
  using F = OptimizerFamily;
  using S = InitScheme;
  const Exponent h(-1, 2), m1(-1), z(0);
  static const std::vector<SymbolicExpectation> table{
      {F::GdShared, S::Init1, h, h, false, "g[f_t]", Exponent(-1, 2)},
      {F::GdShared, S::Init2, h, h, false, "g[f_t]", Exponent(1, 2)},
      {F::GdDecoupled, S::Init1, m1, z, true, "", z},
      {F::GdDecoupled, S::Init2, m1, z, true, "", z},
      {F::AdamShared, S::Init1, h, h, false, "g[A_t Z]", Exponent(1, 2)},
      {F::AdamShared, S::Init2, h, h, false, "g[A_t Z]", Exponent(1, 2)},
      {F::AdamDecoupled, S::Init1, m1, z, true, "", z},
      {F::AdamDecoupled, S::Init2, m1, z, true, "", z},
  };
  return table;
}

/// Empty when every solution matches its expectation exactly; otherwise one line per mismatch.
inline std::string symbolic_mismatches() {
  std::ostringstream os;
  for (const auto& e : symbolic_expectations()) {
    const EfficiencySolution sol = solve_efficiency(e.family, e.scheme);
    const bool witness_ok = e.feasible ? !sol.witness.has_value()
                                       : sol.witness && sol.witness->quantity == e.witness_quantity &&
                                             sol.witness->value == e.witness_value;
    if (sol.lr_a != e.lr_a || sol.lr_b != e.lr_b || sol.feasible != e.feasible || !witness_ok) {
      os << to_string(e.family) << ' ' << to_string(e.scheme) << ": got (" << sol.lr_a << ", " << sol.lr_b << ") "
         << (sol.feasible ? "feasible" : "infeasible");
      if (sol.witness) os << " witness " << sol.witness->quantity << " = " << sol.witness->value;
      os << "; ";
    }
  }
  return os.str();
}

inline std::vector<CheckResult> run_check_suite(const CheckOptions& opt = {}) {
  std::vector<CheckResult> out;
  auto add = [&](std::string name, bool pass, std::string detail) {
    out.push_back({std::move(name), pass, std::move(detail)});
  };

  const std::string symbolic = symbolic_mismatches();
  add("symbolic-solutions", symbolic.empty(), symbolic.empty() ? "8 settings exact" : symbolic);

  double worst_linear = 0.0, worst_mlp = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    worst_linear = std::max(worst_linear, gradient_check_linear(s));
    worst_mlp = std::max(worst_mlp, gradient_check_mlp(s));
  }
  add("gradient-linear", worst_linear <= 1e-6, "max relative error " + format_float(worst_linear));
  add("gradient-mlp", worst_mlp <= 1e-6, "max relative error " + format_float(worst_mlp));

  const std::size_t lin = linear_identity_violations(50, 5);
  add("identity-linear-delta", lin == 0, std::to_string(lin) + " violations in 250 steps");
  const std::size_t lora = lora_identity_violations(20, 5);
  add("identity-lora-delta", lora == 0, std::to_string(lora) + " violations in 100 steps");
  const std::size_t align = alignment_identity_violations(100, opt.sign);
  add("identity-signsgd-alignment", align == 0, std::to_string(align) + " violations in 100 draws");

  RunConfig sweep_cfg = default_config(ExperimentKind::WidthSweep);
  sweep_cfg.workers = opt.workers;
  Scenario sc = make_scenario("prop32", sweep_cfg);
  sc.spec.swap_lr_groups = opt.swap_lr_groups;
  const ScenarioOutcome outcome = run_scenario(sc);
  add("width-sweep-prop32", outcome.verdict.pass(), outcome.verdict.pass() ? "all slopes within 0.15" : "slope out of tolerance");

  RunConfig base = default_config(ExperimentKind::LrGrid);
  base.steps = 100;
  base.train_size = 200;
  base.test_size = 50;
  bool same = baseline_equivalent(base, 0.05, 7);
  base.optimizer = GradientProcessor::Adam;
  same = same && baseline_equivalent(base, 0.01, 7);
  add("baseline-equivalence", same, "lambda = 1 vs shared eta over 100 steps (gd, adamw)");

  return out;
}

inline bool all_pass(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.pass; });
}

}  // namespace loraplus
