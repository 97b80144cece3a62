// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "loraplus/adapters.hpp"
#include "loraplus/errors.hpp"

namespace loraplus {

/// Exact rational exponent γ, meaning a quantity scales as Θ(n^γ) in width n.
class Exponent {
 public:
  constexpr Exponent() = default;
  constexpr Exponent(std::int64_t value) : num_(value) {}  // NOLINT(google-explicit-constructor)
  constexpr Exponent(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
    if (den_ == 0) throw DomainError("Exponent: zero denominator");
    normalize();
  }

  [[nodiscard]] constexpr std::int64_t num() const noexcept { return num_; }
  [[nodiscard]] constexpr std::int64_t den() const noexcept { return den_; }
  [[nodiscard]] constexpr double to_double() const noexcept {
    return static_cast<double>(num_) / static_cast<double>(den_);
  }
  [[nodiscard]] constexpr bool is_zero() const noexcept { return num_ == 0; }

  friend constexpr Exponent operator+(Exponent a, Exponent b) {
    return {a.num_ * b.den_ + b.num_ * a.den_, a.den_ * b.den_};
  }
  friend constexpr Exponent operator-(Exponent a, Exponent b) {
    return {a.num_ * b.den_ - b.num_ * a.den_, a.den_ * b.den_};
  }
  friend constexpr Exponent operator*(Exponent a, Exponent b) { return {a.num_ * b.num_, a.den_ * b.den_}; }
  friend constexpr Exponent operator/(Exponent a, Exponent b) {
    if (b.num_ == 0) throw DomainError("Exponent: division by zero");
    return {a.num_ * b.den_, a.den_ * b.num_};
  }
  constexpr Exponent operator-() const { return {-num_, den_}; }

  friend constexpr bool operator==(Exponent a, Exponent b) noexcept {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend constexpr std::strong_ordering operator<=>(Exponent a, Exponent b) noexcept {
    return a.num_ * b.den_ <=> b.num_ * a.den_;
  }

  [[nodiscard]] std::string str() const {
    return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
  }

 private:
  constexpr void normalize() {
    if (den_ < 0) {
      num_ = -num_;
      den_ = -den_;
    }
    const std::int64_t g = std::gcd(num_ < 0 ? -num_ : num_, den_);
    if (g > 1) {
      num_ /= g;
      den_ /= g;
    }
  }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

inline std::ostream& operator<<(std::ostream& os, Exponent e) { return os << e.str(); }

inline Exponent max(Exponent a, Exponent b) { return a < b ? b : a; }

enum class GammaOpKind { Add, Mul };

/// γ[u·v] = γ[u] + γ[v];  γ[u + v] = max(γ[u], γ[v]).
/// The max rule assumes no exact cancellation (v ≠ −u), which none of the recursions here produce.
inline Exponent gamma_op(GammaOpKind kind, Exponent u, Exponent v) {
  return kind == GammaOpKind::Mul ? u + v : max(u, v);
}

// Axioms: γ[‖x‖²] = γ[sign(Z)ᵀ Z] = 1 (sums of n order-one terms), γ[aᵀx] = 0 at
// Init1 (central limit), layer inputs and residuals are Θ(1).
inline constexpr std::int64_t kSquaredNormExponent = 1;

enum class OptimizerFamily { GdShared, GdDecoupled, AdamShared, AdamDecoupled };

inline std::string_view to_string(OptimizerFamily f) noexcept {
  switch (f) {
    case OptimizerFamily::GdShared: return "gd-shared";
    case OptimizerFamily::GdDecoupled: return "gd-decoupled";
    case OptimizerFamily::AdamShared: return "adam-shared";
    case OptimizerFamily::AdamDecoupled: return "adam-decoupled";
  }
  return "?";
}

inline OptimizerFamily parse_family(std::string_view text) {
  for (auto f : {OptimizerFamily::GdShared, OptimizerFamily::GdDecoupled, OptimizerFamily::AdamShared,
                 OptimizerFamily::AdamDecoupled}) {
    if (text == to_string(f)) return f;
  }
  throw ConfigError("unknown setting family '" + std::string(text) +
                    "' (expected gd-shared|gd-decoupled|adam-shared|adam-decoupled)");
}

inline bool is_gd(OptimizerFamily f) noexcept {
  return f == OptimizerFamily::GdShared || f == OptimizerFamily::GdDecoupled;
}
inline bool is_shared(OptimizerFamily f) noexcept {
  return f == OptimizerFamily::GdShared || f == OptimizerFamily::AdamShared;
}

struct DynamicsSetting {
  OptimizerFamily family = OptimizerFamily::GdDecoupled;
  InitScheme scheme = InitScheme::Init1;
  Exponent lr_a;  // γ[η_A] (c_a)
  Exponent lr_b;  // γ[η_B] (c_b)
  int horizon = 10;

  static DynamicsSetting shared(OptimizerFamily family, InitScheme scheme, Exponent c, int horizon = 10) {
    return {family, scheme, c, c, horizon};
  }

  void validate() const {
    if (horizon < 2) throw DomainError("DynamicsSetting: horizon must be >= 2");
    if (is_shared(family) && lr_a != lr_b) throw DomainError("DynamicsSetting: shared family needs c_a = c_b");
  }
};

/// Exponents after t updates. For GD `state_b`/`state_a` are γ[b_t]/γ[a_tᵀx]; for Adam
/// they are γ[B_t]/γ[A_t Z]. Update terms δⁱ_t need the state at t−1 and are absent at t = 1.
struct GammaStep {
  int t = 0;
  Exponent state_b;
  Exponent state_a;
  Exponent output;  // γ[f_t] or γ[Z_B^t]
  std::optional<Exponent> delta1, delta2, delta3;
  bool stable = true;
};

struct GammaTrajectory {
  DynamicsSetting setting;
  std::vector<GammaStep> steps;  // t = 1..T

  [[nodiscard]] const GammaStep& at(int t) const {
    if (t < 1 || t > static_cast<int>(steps.size())) throw DomainError("GammaTrajectory: step out of range");
    return steps[static_cast<std::size_t>(t - 1)];
  }

  /// First t from which the state never changes again.
  [[nodiscard]] int fixed_point_step() const {
    int fixed = static_cast<int>(steps.size());
    for (int i = static_cast<int>(steps.size()) - 1; i >= 1; --i) {
      const auto& cur = steps[static_cast<std::size_t>(i)];
      const auto& prev = steps[static_cast<std::size_t>(i - 1)];
      if (cur.state_b == prev.state_b && cur.state_a == prev.state_a) fixed = i;
      else break;
    }
    return fixed;
  }
};

namespace detail {

inline GammaStep make_step(int t, Exponent b, Exponent a) {
  GammaStep s;
  s.t = t;
  s.state_b = b;
  s.state_a = a;
  s.output = gamma_op(GammaOpKind::Mul, b, a);
  return s;
}

}  // namespace detail

/// Toy linear model under gradient descent:
///   γ[b_t]    = max(γ[b_{t−1}],    c_b + γ[a_{t−1}ᵀx])
///   γ[a_tᵀx]  = max(γ[a_{t−1}ᵀx], c_a + γ[b_{t−1}] + 1)
/// with δ¹ = c_a + 2γ[b] + 1, δ² = c_b + 2γ[aᵀx], δ³ = c_a + c_b + γ[b] + γ[aᵀx] + 1 (state at t−1).
inline GammaTrajectory run_gd_recursion(const DynamicsSetting& setting) {
  setting.validate();
  const Exponent ca = setting.lr_a;
  const Exponent cb = setting.lr_b;
  const Exponent one(kSquaredNormExponent);
  GammaTrajectory traj;
  traj.setting = setting;
  Exponent b = setting.scheme == InitScheme::Init1 ? cb : Exponent(0);
  Exponent ax = setting.scheme == InitScheme::Init1 ? Exponent(0) : ca + one;
  traj.steps.push_back(detail::make_step(1, b, ax));
  for (int t = 2; t <= setting.horizon; ++t) {
    const Exponent nb = max(b, cb + ax);
    const Exponent nax = max(ax, ca + b + one);
    GammaStep s = detail::make_step(t, nb, nax);
    s.delta1 = ca + b + b + one;
    s.delta2 = cb + ax + ax;
    s.delta3 = ca + cb + b + ax + one;
    s.stable = s.output <= Exponent(0);
    traj.steps.push_back(s);
    b = nb;
    ax = nax;
  }
  traj.steps.front().stable = traj.steps.front().output <= Exponent(0);
  return traj;
}

/// Single LoRA layer under sign-processed (Adam-type) updates, with γ[g_A Z] = 1:
///   γ[B_t]   = max(γ[B_{t−1}],   γ[η_B])
///   γ[A_t Z] = max(γ[A_{t−1} Z], γ[η_A] + 1)
/// with δ¹ = γ[η_A] + γ[B] + 1, δ² = γ[η_B] + γ[A Z], δ³ = γ[η_A] + γ[η_B] + 1 (state at t−1).
/// Stable iff γ[A Z] ≤ 0 and γ[Z_B] ≤ 0.
inline GammaTrajectory run_adam_recursion(const DynamicsSetting& setting) {
  setting.validate();
  const Exponent ea = setting.lr_a;
  const Exponent eb = setting.lr_b;
  const Exponent one(kSquaredNormExponent);
  GammaTrajectory traj;
  traj.setting = setting;
  // Init1: B_0 = 0, A_1 = A_0.  Init2: A_0 = 0 so g_B = 0 at step 1 and B_1 = B_0.
  Exponent bm = setting.scheme == InitScheme::Init1 ? eb : Exponent(0);
  Exponent az = setting.scheme == InitScheme::Init1 ? Exponent(0) : ea + one;
  auto stability = [](const GammaStep& s) { return s.state_a <= Exponent(0) && s.output <= Exponent(0); };
  GammaStep first = detail::make_step(1, bm, az);
  first.stable = stability(first);
  traj.steps.push_back(first);
  for (int t = 2; t <= setting.horizon; ++t) {
    const Exponent nbm = max(bm, eb);
    const Exponent naz = max(az, ea + one);
    GammaStep s = detail::make_step(t, nbm, naz);
    s.delta1 = ea + bm + one;
    s.delta2 = eb + az;
    s.delta3 = ea + eb + one;
    s.stable = stability(s);
    traj.steps.push_back(s);
    bm = nbm;
    az = naz;
  }
  return traj;
}

inline GammaTrajectory run_recursion(const DynamicsSetting& setting) {
  return is_gd(setting.family) ? run_gd_recursion(setting) : run_adam_recursion(setting);
}

// ---------------------------------------------------------------------------
// Exact linear algebra over the rationals.

struct LinearEquation {
  std::vector<Exponent> coeffs;  // one per unknown
  Exponent rhs;
  std::string label;
};

enum class SolveStatus { Unique, Underdetermined, Inconsistent };

struct LinearSolution {
  SolveStatus status = SolveStatus::Inconsistent;
  std::vector<Exponent> values;  // valid when Unique
};

/// Gauss-Jordan elimination; exact, so rank decisions are exact.
inline LinearSolution solve_linear_system(const std::vector<LinearEquation>& equations, std::size_t unknowns) {
  std::vector<std::vector<Exponent>> rows;
  rows.reserve(equations.size());
  for (const auto& eq : equations) {
    if (eq.coeffs.size() != unknowns) throw DimensionError("solve_linear_system: coefficient count");
    auto row = eq.coeffs;
    row.push_back(eq.rhs);
    rows.push_back(std::move(row));
  }
  std::size_t rank = 0;
  std::vector<std::size_t> pivot_cols;
  for (std::size_t col = 0; col < unknowns && rank < rows.size(); ++col) {
    std::size_t pivot = rank;
    while (pivot < rows.size() && rows[pivot][col].is_zero()) ++pivot;
    if (pivot == rows.size()) continue;
    std::swap(rows[rank], rows[pivot]);
    const Exponent p = rows[rank][col];
    for (auto& v : rows[rank]) v = v / p;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (r == rank || rows[r][col].is_zero()) continue;
      const Exponent f = rows[r][col];
      for (std::size_t c = col; c <= unknowns; ++c) rows[r][c] = rows[r][c] - f * rows[rank][c];
    }
    pivot_cols.push_back(col);
    ++rank;
  }
  LinearSolution out;
  for (std::size_t r = rank; r < rows.size(); ++r) {
    if (!rows[r][unknowns].is_zero()) return out;
  }
  if (rank < unknowns) {
    out.status = SolveStatus::Underdetermined;
    return out;
  }
  out.status = SolveStatus::Unique;
  out.values.assign(unknowns, Exponent(0));
  for (std::size_t r = 0; r < rank; ++r) out.values[pivot_cols[r]] = rows[r][unknowns];
  return out;
}

// ---------------------------------------------------------------------------
// Efficiency solver: solve the Θ(1) conditions as an exact linear system, then replay.

struct Witness {
  std::string quantity;
  int t = 0;
  Exponent value;
  std::string condition;
};

struct EfficiencySolution {
  OptimizerFamily family = OptimizerFamily::GdDecoupled;
  InitScheme scheme = InitScheme::Init1;
  std::vector<LinearEquation> system;      // efficiency conditions
  std::vector<LinearEquation> ansatz;      // steady-state equations used when the system is underdetermined
  bool used_ansatz = false;
  Exponent lr_a;
  Exponent lr_b;
  Exponent lr_sum;  // necessary condition on γ[η_A] + γ[η_B] (decoupled) or 2γ[η] (shared)
  bool feasible = false;
  std::optional<Witness> witness;
  GammaTrajectory replay;
};

namespace detail {

// Unknowns: [c_a, c_b, s_b, s_a] where s_b, s_a are the steady state exponents
// (γ[b], γ[aᵀx] for GD; γ[B], γ[A Z] for Adam). Shared families tie c_a = c_b.
inline std::vector<LinearEquation> efficiency_system(OptimizerFamily family) {
  const Exponent z(0), o(1), two(2), one(kSquaredNormExponent);
  std::vector<LinearEquation> eqs;
  if (is_gd(family)) {
    eqs.push_back({{o, z, two, z}, -one, "delta1: c_a + 2*g[b] + 1 = 0"});
    eqs.push_back({{z, o, z, two}, z, "delta2: c_b + 2*g[a.x] = 0"});
    eqs.push_back({{z, z, o, o}, z, "output: g[b] + g[a.x] = 0"});
  } else {
    eqs.push_back({{o, z, o, z}, -one, "delta1: g[eta_A] + g[B] + 1 = 0"});
    eqs.push_back({{z, o, z, o}, z, "delta2: g[eta_B] + g[AZ] = 0"});
    eqs.push_back({{z, z, o, o}, z, "output: g[B] + g[AZ] = 0"});
  }
  if (is_shared(family)) eqs.push_back({{o, -o, z, z}, z, "shared: c_a - c_b = 0"});
  return eqs;
}

// The recursion's t = 1 values, which persist at the efficient fixed point.
inline std::vector<LinearEquation> steady_state_ansatz(OptimizerFamily family, InitScheme scheme) {
  const Exponent z(0), o(1), one(kSquaredNormExponent);
  const bool gd = is_gd(family);
  const std::string b = gd ? "g[b]" : "g[B]";
  const std::string a = gd ? "g[a.x]" : "g[AZ]";
  std::vector<LinearEquation> eqs;
  if (scheme == InitScheme::Init1) {
    eqs.push_back({{z, -o, o, z}, z, "init1 steady state: " + b + " = c_b"});
    eqs.push_back({{z, z, z, o}, z, "init1 steady state: " + a + " = 0"});
  } else {
    eqs.push_back({{z, z, o, z}, z, "init2 steady state: " + b + " = 0"});
    eqs.push_back({{-o, z, z, o}, one, "init2 steady state: " + a + " = c_a + 1"});
  }
  return eqs;
}

inline std::optional<Witness> check_replay(const GammaTrajectory& traj) {
  const bool gd = is_gd(traj.setting.family);
  const std::string out_name = gd ? "g[f_t]" : "g[Z_B]";
  for (const auto& s : traj.steps) {
    if (s.t < 2) continue;
    if (!gd && s.state_a > Exponent(0)) return Witness{"g[A_t Z]", s.t, s.state_a, "stability requires <= 0"};
    if (s.output != Exponent(0)) return Witness{out_name, s.t, s.output, "efficiency requires = 0"};
    if (s.delta1 && *s.delta1 != Exponent(0)) return Witness{"g[delta1]", s.t, *s.delta1, "efficiency requires = 0"};
    if (s.delta2 && *s.delta2 != Exponent(0)) return Witness{"g[delta2]", s.t, *s.delta2, "efficiency requires = 0"};
  }
  return std::nullopt;
}

}  // namespace detail

inline EfficiencySolution solve_efficiency(OptimizerFamily family, InitScheme scheme, int horizon = 10) {
  EfficiencySolution sol;
  sol.family = family;
  sol.scheme = scheme;
  sol.system = detail::efficiency_system(family);

  LinearSolution solved = solve_linear_system(sol.system, 4);
  if (solved.status == SolveStatus::Underdetermined) {
    sol.ansatz = detail::steady_state_ansatz(family, scheme);
    sol.used_ansatz = true;
    auto augmented = sol.system;
    augmented.insert(augmented.end(), sol.ansatz.begin(), sol.ansatz.end());
    solved = solve_linear_system(augmented, 4);
  }
  if (solved.status != SolveStatus::Unique) {
    throw ConsistencyError("solve_efficiency: no unique candidate for " + std::string(to_string(family)));
  }
  sol.lr_a = solved.values[0];
  sol.lr_b = solved.values[1];
  sol.lr_sum = sol.lr_a + sol.lr_b;

  DynamicsSetting setting{family, scheme, sol.lr_a, sol.lr_b, horizon};
  sol.replay = run_recursion(setting);
  sol.witness = detail::check_replay(sol.replay);
  sol.feasible = !sol.witness.has_value();
  return sol;
}

/// Human-readable derivation: system, candidate, verdict, replay table.
inline std::string derivation_text(const EfficiencySolution& sol) {
  std::ostringstream os;
  const bool gd = is_gd(sol.family);
  os << "setting: " << to_string(sol.family) << ' ' << to_string(sol.scheme) << '\n';
  os << "efficiency conditions (t > 1):\n";
  for (const auto& eq : sol.system) os << "  " << eq.label << '\n';
  if (sol.used_ansatz) {
    os << "system is underdetermined; it implies c_a + c_b = -1. steady-state equations from the recursion:\n";
    for (const auto& eq : sol.ansatz) os << "  " << eq.label << '\n';
  }
  if (is_shared(sol.family)) {
    os << "candidate: " << (gd ? "c" : "g[eta]") << " = " << sol.lr_a << '\n';
  } else {
    os << "candidate: " << (gd ? "(c_a, c_b)" : "(g[eta_A], g[eta_B])") << " = (" << sol.lr_a << ", " << sol.lr_b
       << "), sum = " << sol.lr_sum << '\n';
  }
  os << "replay recursion:\n";
  if (gd) {
    os << "  g[b_t] = max(g[b_{t-1}], " << sol.lr_b << " + g[a_{t-1}.x])\n";
    os << "  g[a_t.x] = max(g[a_{t-1}.x], " << sol.lr_a << " + g[b_{t-1}] + 1)\n";
    os << "  t  g[b_t]  g[a_t.x]  g[f_t]  g[d1]  g[d2]  g[d3]\n";
  } else {
    os << "  g[B_t] = max(g[B_{t-1}], " << sol.lr_b << ")\n";
    os << "  g[A_t Z] = max(g[A_{t-1} Z], " << sol.lr_a << " + 1)\n";
    os << "  t  g[B_t]  g[A_t Z]  g[Z_B]  g[d1]  g[d2]  g[d3]  stable\n";
  }
  auto opt = [](const std::optional<Exponent>& e) { return e ? e->str() : std::string("-"); };
  for (const auto& s : sol.replay.steps) {
    os << "  " << s.t << "  " << s.state_b << "  " << s.state_a << "  " << s.output << "  " << opt(s.delta1) << "  "
       << opt(s.delta2) << "  " << opt(s.delta3);
    if (!gd) os << "  " << (s.stable ? "yes" : "no");
    os << '\n';
  }
  if (sol.feasible) {
    os << "verdict: FEASIBLE\n";
  } else {
    os << "verdict: INFEASIBLE, witness " << sol.witness->quantity << " = " << sol.witness->value << " at t = "
       << sol.witness->t << " (" << sol.witness->condition << ")\n";
  }
  return os.str();
}

}  // namespace loraplus
