// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "loraplus/adapters.hpp"
#include "loraplus/gamma.hpp"
#include "loraplus/models.hpp"
#include "loraplus/numerics.hpp"
#include "loraplus/optim.hpp"
#include "loraplus/parallel.hpp"

namespace loraplus {

/// η_a = κ_a·n^{c_a}, η_b = κ_b·n^{c_b}.
struct LrRule {
  Exponent c_a;
  Exponent c_b;
  double kappa_a = 1.0;
  double kappa_b = 1.0;

  static LrRule shared(Exponent c, double kappa) { return {c, c, kappa, kappa}; }

  [[nodiscard]] double eta_a(std::size_t n) const {
    return kappa_a * std::pow(static_cast<double>(n), c_a.to_double());
  }
  [[nodiscard]] double eta_b(std::size_t n) const {
    return kappa_b * std::pow(static_cast<double>(n), c_b.to_double());
  }
  [[nodiscard]] ParamGroups groups(std::size_t n) const { return {eta_a(n), eta_b(n)}; }
};

inline constexpr double kIdentityTolerance = 1e-12;
inline constexpr double kDivergenceThreshold = 1e10;

// ---------------------------------------------------------------------------
// One-step update decompositions.

/// Signed terms of Δf = −δ¹ − δ² + δ³ for one GD step of the toy linear model.
struct DeltaTerms {
  double delta1 = 0.0;  // η_a b² U ‖x‖²
  double delta2 = 0.0;  // η_b (aᵀx)² U
  double delta3 = 0.0;  // η_a η_b U² b (aᵀx) ‖x‖²
  double delta_f = 0.0; // f_after(x) − f_before(x), measured
};

namespace detail {

inline double abs_dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] * b[i]);
  return acc;
}

}  // namespace detail

/// Throws ConsistencyError when the measured change deviates from −δ¹ − δ² + δ³ by
/// more than 1e-12 relative to the magnitudes involved (a sign the step was not plain GD).
inline DeltaTerms delta_terms_linear(const ToyLinearModel& before, const ToyLinearModel& after,
                                     std::span<const double> x, double y, const ParamGroups& groups) {
  const double u = dot(before.a, x);
  const double sq = dot(x, x);
  const double f_before = toy_linear_forward(before, x);
  const double f_after = toy_linear_forward(after, x);
  const double residual = f_before - y;
  DeltaTerms d;
  d.delta1 = groups.eta_A() * before.b * before.b * residual * sq;
  d.delta2 = groups.eta_B() * u * u * residual;
  d.delta3 = groups.eta_A() * groups.eta_B() * residual * residual * before.b * u * sq;
  d.delta_f = f_after - f_before;
  const double predicted = -d.delta1 - d.delta2 + d.delta3;
  const double scale = std::abs(f_before) + std::abs(f_after) + std::abs(d.delta1) + std::abs(d.delta2) +
                       std::abs(d.delta3) + std::abs(before.b) * detail::abs_dot(before.a, x) +
                       std::abs(after.b) * detail::abs_dot(after.a, x) + 2.0 * detail::abs_dot(before.w_star, x);
  if (std::abs(d.delta_f - predicted) > kIdentityTolerance * scale) {
    std::ostringstream msg;
    msg << std::setprecision(17) << "delta_terms_linear: measured change " << d.delta_f
        << " != -d1 - d2 + d3 = " << predicted;
    throw ConsistencyError(msg.str());
  }
  return d;
}

/// ΔZ_B = B_{t−1}ΔZ_A + ΔB Z_A^{t−1} + ΔB ΔZ_A.
struct LoraDeltaTerms {
  Vector delta1;
  Vector delta2;
  Vector delta3;
  Vector delta_zb;  // B_next z_next − B_prev z_prev, measured
  [[nodiscard]] double magnitude1() const noexcept { return norm_inf(delta1); }
  [[nodiscard]] double magnitude2() const noexcept { return norm_inf(delta2); }
  [[nodiscard]] double magnitude3() const noexcept { return norm_inf(delta3); }
  [[nodiscard]] double magnitude_zb() const noexcept { return norm_inf(delta_zb); }
};

inline LoraDeltaTerms delta_terms_lora(const Matrix& B_prev, std::span<const double> za_prev, const Matrix& B_next,
                                       std::span<const double> za_next) {
  require_same_shape(B_prev, B_next, "delta_terms_lora B");
  require_length(za_prev.size(), B_prev.cols(), "delta_terms_lora z_a prev");
  require_length(za_next.size(), B_prev.cols(), "delta_terms_lora z_a next");
  const Vector dza = subtract(za_next, za_prev);
  const Matrix dB = B_next - B_prev;
  LoraDeltaTerms d;
  d.delta1 = matvec(B_prev, dza);
  d.delta2 = matvec(dB, za_prev);
  d.delta3 = matvec(dB, dza);
  d.delta_zb = subtract(matvec(B_next, za_next), matvec(B_prev, za_prev));
  for (std::size_t i = 0; i < d.delta_zb.size(); ++i) {
    const double sum = d.delta1[i] + d.delta2[i] + d.delta3[i];
    const double scale = detail::abs_dot(B_next.row(i), za_next) + detail::abs_dot(B_prev.row(i), za_prev) +
                         std::abs(d.delta1[i]) + std::abs(d.delta2[i]) + std::abs(d.delta3[i]);
    if (std::abs(d.delta_zb[i] - sum) > kIdentityTolerance * scale) {
      throw ConsistencyError("delta_terms_lora: dZ_B != d1 + d2 + d3 at row " + std::to_string(i));
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Width sweeps.

enum class SweepModel { Linear, Mlp };

/// Coupled: every width of a seed shares a₀ᵀx (Init1, via the component of a₀ along x)
/// and b₀ (Init2), and input prefixes are nested. Each width's marginal law is unchanged;
/// only the joint law across widths is coupled, which removes seed noise from slope fits.
/// Independent: a fresh stream per (seed, width). MLP sweeps always sample independently.
enum class SweepSampling { Coupled, Independent };

enum class InputKind { Rademacher, Gaussian };

struct SweepSpec {
  SweepModel model = SweepModel::Linear;
  InitScheme scheme = InitScheme::Init1;
  MlpInit mlp_init = MlpInit::Dense;
  GradientProcessor processor = GradientProcessor::Identity;
  LrRule rule;
  std::vector<std::size_t> widths;
  int steps = 3;
  std::vector<std::uint64_t> seeds;
  SweepSampling sampling = SweepSampling::Coupled;
  InputKind input = InputKind::Rademacher;
  double target = 1.0;
  std::size_t mlp_input_dim = 5;
  std::size_t mlp_rank = 4;
  double mlp_alpha = 4.0;
  bool swap_lr_groups = false;  // fault injection used by the self-check
  std::size_t workers = 1;

  void validate() const {
    if (widths.size() < 2) throw DomainError("SweepSpec: need at least 2 widths");
    if (!std::is_sorted(widths.begin(), widths.end()) ||
        std::adjacent_find(widths.begin(), widths.end()) != widths.end() || widths.front() < 1) {
      throw DomainError("SweepSpec: widths must be strictly increasing and positive");
    }
    if (steps < 3) throw DomainError("SweepSpec: need at least 3 steps");
    if (seeds.empty()) throw DomainError("SweepSpec: need at least one seed");
    if (model == SweepModel::Linear && processor == GradientProcessor::Adam) {
      throw DomainError("SweepSpec: linear sweeps support gd and sign processors");
    }
  }
};

inline const std::vector<std::string>& sweep_quantities(SweepModel model) {
  static const std::vector<std::string> linear{"f", "b", "ax", "delta1", "delta2", "delta3", "delta_f"};
  static const std::vector<std::string> mlp{"z_b", "a_z", "b_norm", "delta1", "delta2", "delta3", "delta_zb"};
  return model == SweepModel::Linear ? linear : mlp;
}

struct SweepCell {
  bool diverged = false;
  int steps_completed = 0;
  std::vector<Vector> values;  // [quantity][t − 1]
};

class WidthSweepReport {
 public:
  WidthSweepReport() = default;
  explicit WidthSweepReport(SweepSpec spec)
      : spec_(std::move(spec)),
        quantities_(sweep_quantities(spec_.model)),
        cells_(spec_.widths.size() * spec_.seeds.size()) {}

  [[nodiscard]] const SweepSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] const std::vector<std::string>& quantities() const noexcept { return quantities_; }

  [[nodiscard]] SweepCell& cell(std::size_t width_index, std::size_t seed_index) {
    return cells_[width_index * spec_.seeds.size() + seed_index];
  }
  [[nodiscard]] const SweepCell& cell(std::size_t width_index, std::size_t seed_index) const {
    return cells_[width_index * spec_.seeds.size() + seed_index];
  }

  [[nodiscard]] std::size_t quantity_index(std::string_view name) const {
    const auto it = std::find(quantities_.begin(), quantities_.end(), name);
    if (it == quantities_.end()) throw ConfigError("unknown sweep quantity '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - quantities_.begin());
  }

  /// Mean over non-diverged seeds; nullopt when every seed diverged.
  [[nodiscard]] std::optional<double> mean_magnitude(std::string_view quantity, std::size_t width_index,
                                                     int t) const {
    if (t < 1 || t > spec_.steps) throw DomainError("mean_magnitude: step out of range");
    const std::size_t q = quantity_index(quantity);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < spec_.seeds.size(); ++s) {
      const auto& c = cell(width_index, s);
      if (c.diverged) continue;
      total += c.values[q][static_cast<std::size_t>(t - 1)];
      ++count;
    }
    if (count == 0) return std::nullopt;
    return total / static_cast<double>(count);
  }

  [[nodiscard]] bool all_diverged() const {
    return std::all_of(cells_.begin(), cells_.end(), [](const SweepCell& c) { return c.diverged; });
  }

  /// Columns: width,seed,step,quantity,magnitude,diverged. Rows for a diverged cell cover
  /// the steps completed before divergence.
  void write_csv(std::ostream& os) const;

 private:
  SweepSpec spec_;
  std::vector<std::string> quantities_;
  std::vector<SweepCell> cells_;
};

/// Nine significant digits; the single float format of every CSV this library writes.
inline std::string format_float(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void WidthSweepReport::write_csv(std::ostream& os) const {
  os << "width,seed,step,quantity,magnitude,diverged\n";
  for (std::size_t w = 0; w < spec_.widths.size(); ++w) {
    for (std::size_t s = 0; s < spec_.seeds.size(); ++s) {
      const auto& c = cell(w, s);
      for (int t = 1; t <= c.steps_completed; ++t) {
        for (std::size_t q = 0; q < quantities_.size(); ++q) {
          os << spec_.widths[w] << ',' << spec_.seeds[s] << ',' << t << ',' << quantities_[q] << ','
             << format_float(c.values[q][static_cast<std::size_t>(t - 1)]) << ',' << (c.diverged ? 1 : 0) << '\n';
        }
      }
    }
  }
}

namespace detail {

inline bool diverged_value(double v) { return !std::isfinite(v) || std::abs(v) > kDivergenceThreshold; }

struct LinearSample {
  ToyLinearModel model;
  Vector x;
};

inline LinearSample sample_linear(const SweepSpec& spec, std::size_t n, std::uint64_t seed) {
  LinearSample out;
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
  auto draw_input = [&](SeededRng& rng) {
    out.x.resize(n);
    for (double& v : out.x) v = spec.input == InputKind::Rademacher ? rng.rademacher() : rng.gaussian();
  };
  if (spec.sampling == SweepSampling::Independent) {
    SeededRng rng = SeededRng(seed).derive(n);
    draw_input(rng);
    out.model = init_toy_linear(n, spec.scheme, rng);
    return out;
  }
  SeededRng rng(seed);
  const double projection = rng.gaussian();  // a₀ᵀx / (‖x‖/√n) for Init1
  const double b0 = rng.gaussian();
  SeededRng input_rng = rng.derive(1);
  SeededRng weight_rng = rng.derive(2);
  draw_input(input_rng);
  out.model.w_star.assign(n, 0.0);
  if (spec.scheme == InitScheme::Init2) {
    out.model.a.assign(n, 0.0);
    out.model.b = b0;
    return out;
  }
  // a = g − (g·x̂)x̂ + (ξ/√n)x̂ with g ~ N(0, I/n): still N(0, I/n), and a₀ᵀx = ξ‖x‖/√n.
  Vector g(n);
  for (double& v : g) v = weight_rng.gaussian() * inv_sqrt_n;
  const double x_norm = std::sqrt(dot(out.x, out.x));
  if (x_norm == 0.0) {
    out.model.a = std::move(g);
    return out;
  }
  const double along = dot(g, out.x) / x_norm;
  const double target = projection * inv_sqrt_n;
  out.model.a.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.model.a[i] = g[i] + (target - along) * out.x[i] / x_norm;
  out.model.b = 0.0;
  return out;
}

inline void run_linear_cell(const SweepSpec& spec, std::size_t n, std::uint64_t seed, SweepCell& cell) {
  LinearSample sample = sample_linear(spec, n, seed);
  ToyLinearModel& model = sample.model;
  const ParamGroups groups = spec.swap_lr_groups ? spec.rule.groups(n).swapped() : spec.rule.groups(n);
  cell.values.assign(sweep_quantities(SweepModel::Linear).size(), Vector(static_cast<std::size_t>(spec.steps), 0.0));
  for (int t = 1; t <= spec.steps; ++t) {
    const ToyLinearModel before = model;
    const LinearGrads grads = toy_linear_backward(model, sample.x, spec.target);
    first_order_step(model.a, grads.grad_a, model.b, grads.grad_b, groups, spec.processor);
    const double f_after = toy_linear_forward(model, sample.x);
    if (diverged_value(f_after) || diverged_value(model.b)) {
      cell.diverged = true;
      return;
    }
    double d1, d2, d3, df;
    if (spec.processor == GradientProcessor::Identity) {
      const DeltaTerms d = delta_terms_linear(before, model, sample.x, spec.target, groups);
      d1 = d.delta1, d2 = d.delta2, d3 = d.delta3, df = d.delta_f;
    } else {
      // General form: Δf = b_{t−1}Δ(aᵀx) + Δb·(a_{t−1}ᵀx) + Δb·Δ(aᵀx).
      const double u_prev = dot(before.a, sample.x);
      const double du = dot(model.a, sample.x) - u_prev;
      const double db = model.b - before.b;
      d1 = before.b * du, d2 = db * u_prev, d3 = db * du;
      df = f_after - toy_linear_forward(before, sample.x);
    }
    const std::size_t i = static_cast<std::size_t>(t - 1);
    cell.values[0][i] = std::abs(f_after);
    cell.values[1][i] = std::abs(model.b);
    cell.values[2][i] = std::abs(dot(model.a, sample.x));
    cell.values[3][i] = std::abs(d1);
    cell.values[4][i] = std::abs(d2);
    cell.values[5][i] = std::abs(d3);
    cell.values[6][i] = std::abs(df);
    cell.steps_completed = t;
  }
}

inline void run_mlp_cell(const SweepSpec& spec, std::size_t n, std::uint64_t seed, SweepCell& cell) {
  SeededRng rng = SeededRng(seed).derive(n);
  Vector x(spec.mlp_input_dim);
  for (double& v : x) v = rng.gaussian();
  ToyMlpModel model = init_toy_mlp(spec.mlp_input_dim, n, spec.mlp_rank, spec.mlp_alpha, spec.mlp_init, rng);
  const Vector h = hidden_features(model, x);
  const ParamGroups groups = spec.swap_lr_groups ? spec.rule.groups(n).swapped() : spec.rule.groups(n);
  AdamState adam = AdamState::zeros(model.adapter().A.size(), model.adapter().B.size());
  cell.values.assign(sweep_quantities(SweepModel::Mlp).size(), Vector(static_cast<std::size_t>(spec.steps), 0.0));
  for (int t = 1; t <= spec.steps; ++t) {
    const MlpForward fwd = mlp_forward_hidden(model, h);
    const MlpGrads grads = mlp_backward(model, fwd.cache, spec.target);
    const Matrix B_prev = model.adapter().B;
    model.update_adapter([&](Matrix& A, Matrix& B) {
      if (spec.processor == GradientProcessor::Adam) {
        adamw_step(A, grads.grad_A, B, grads.grad_B, groups, adam);
      } else {
        first_order_step(A, grads.grad_A, B, grads.grad_B, groups, spec.processor);
      }
    });
    const LoraFeatures feats = lora_features(model.adapter(), h);
    const double out = mlp_forward_hidden(model, h).output;
    if (diverged_value(out) || !model.adapter().A.all_finite() || !model.adapter().B.all_finite() ||
        norm_inf(feats.z_b) > kDivergenceThreshold) {
      cell.diverged = true;
      return;
    }
    const LoraDeltaTerms d = delta_terms_lora(B_prev, fwd.cache.z_a, model.adapter().B, feats.z_a);
    const std::size_t i = static_cast<std::size_t>(t - 1);
    cell.values[0][i] = norm_inf(feats.z_b);
    cell.values[1][i] = norm_inf(feats.z_a);
    cell.values[2][i] = norm_inf(model.adapter().B);
    cell.values[3][i] = d.magnitude1();
    cell.values[4][i] = d.magnitude2();
    cell.values[5][i] = d.magnitude3();
    cell.values[6][i] = d.magnitude_zb();
    cell.steps_completed = t;
  }
}

}  // namespace detail

/// Trains every (width, seed) cell with η = κ·n^c and records per-step magnitudes.
/// A cell whose output turns non-finite or exceeds 1e10 is marked diverged; throws
/// DivergenceError only when every cell diverged.
inline WidthSweepReport run_width_sweep(const SweepSpec& spec) {
  spec.validate();
  WidthSweepReport report(spec);
  const std::size_t seeds = spec.seeds.size();
  parallel_for(spec.widths.size() * seeds, spec.workers, [&](std::size_t job) {
    const std::size_t w = job / seeds;
    const std::size_t s = job % seeds;
    SweepCell& cell = report.cell(w, s);
    if (spec.model == SweepModel::Linear) {
      detail::run_linear_cell(spec, spec.widths[w], spec.seeds[s], cell);
    } else {
      detail::run_mlp_cell(spec, spec.widths[w], spec.seeds[s], cell);
    }
  });
  if (report.all_diverged()) throw DivergenceError("run_width_sweep: every (width, seed) cell diverged");
  return report;
}

/// Log-log fit of the seed-averaged magnitude of `quantity` at step t against width.
inline ExponentFit estimate_gamma(const WidthSweepReport& report, std::string_view quantity, int t) {
  std::vector<std::pair<double, double>> points;
  for (std::size_t w = 0; w < report.spec().widths.size(); ++w) {
    if (const auto mean = report.mean_magnitude(quantity, w, t)) {
      points.emplace_back(static_cast<double>(report.spec().widths[w]), *mean);
    }
  }
  if (points.size() < 3) {
    throw InsufficientDataError("estimate_gamma: " + std::string(quantity) + " has " +
                                std::to_string(points.size()) + " valid widths, need 3");
  }
  return loglog_fit(points);
}

// ---------------------------------------------------------------------------
// Verdicts.

struct SlopeTarget {
  std::string quantity;
  int t = 2;
  double expected = 0.0;
  double tolerance = 0.1;
};

struct SlopeCheck {
  SlopeTarget target;
  std::optional<ExponentFit> fit;
  std::string error;  // set when the fit could not be computed
  bool pass = false;
};

struct EfficiencyVerdict {
  std::string scenario;
  std::vector<SlopeCheck> checks;
  bool informational = false;  // reported, never failing

  [[nodiscard]] bool pass() const {
    return informational ||
           std::all_of(checks.begin(), checks.end(), [](const SlopeCheck& c) { return c.pass; });
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os << "scenario " << scenario << (informational ? " (informational)" : "") << '\n';
    for (const auto& c : checks) {
      os << "  slope(" << c.target.quantity << ", t=" << c.target.t << ") ";
      if (c.fit) {
        os << "= " << format_float(c.fit->slope) << " (r2 " << format_float(c.fit->r_squared) << ")";
      } else {
        os << "unavailable: " << c.error;
      }
      os << "  expected " << format_float(c.target.expected) << " +/- " << format_float(c.target.tolerance)
         << "  " << (c.pass ? "PASS" : "FAIL") << '\n';
    }
    os << "verdict " << (pass() ? "PASS" : "FAIL") << '\n';
    return os.str();
  }
};

inline EfficiencyVerdict evaluate_verdict(const WidthSweepReport& report, std::string scenario,
                                          const std::vector<SlopeTarget>& targets, bool informational = false) {
  EfficiencyVerdict v;
  v.scenario = std::move(scenario);
  v.informational = informational;
  for (const auto& target : targets) {
    SlopeCheck c;
    c.target = target;
    try {
      c.fit = estimate_gamma(report, target.quantity, target.t);
      c.pass = std::abs(c.fit->slope - target.expected) <= target.tolerance;
    } catch (const std::exception& e) {
      c.error = e.what();
    }
    v.checks.push_back(std::move(c));
  }
  return v;
}

// ---------------------------------------------------------------------------
// SignSGD alignment.

/// Elementwise sign with a configurable value at zero; the identities below need 0.
struct SignConvention {
  double at_zero = 0.0;
  [[nodiscard]] double operator()(double v) const noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : at_zero); }
};

struct AlignmentReport {
  bool factorizes = false;        // sign(S ⊗ z) == sign(S) ⊗ sign(z), elementwise
  bool product_identity = false;  // sign(S ⊗ z)·z == (sign(z)ᵀz)·sign(S), bitwise
  bool degenerate = false;        // z == 0: product is the zero vector
  Vector product;                 // sign(S ⊗ z)·z
  Vector predicted;               // (sign(z)ᵀz)·sign(S)
  double magnitude = 0.0;         // ‖product‖∞

  [[nodiscard]] bool holds() const noexcept { return factorizes && product_identity; }
};

/// raw_grad must equal the outer product S ⊗ z exactly (single-sample gradient of A).
/// Both sides are reduced left to right over the columns, so a correct sign map makes
/// them agree bit for bit.
inline AlignmentReport signsgd_alignment_check(const Matrix& raw_grad, std::span<const double> S,
                                               std::span<const double> z, SignConvention sign = {}) {
  require_length(raw_grad.rows(), S.size(), "signsgd_alignment_check rows");
  require_length(raw_grad.cols(), z.size(), "signsgd_alignment_check cols");
  for (std::size_t i = 0; i < S.size(); ++i) {
    for (std::size_t j = 0; j < z.size(); ++j) {
      if (raw_grad(i, j) != S[i] * z[j]) {
        throw DomainError("signsgd_alignment_check: raw gradient is not the rank-1 outer product S (x) z");
      }
    }
  }
  AlignmentReport rep;
  rep.factorizes = true;
  for (std::size_t i = 0; i < S.size(); ++i) {
    for (std::size_t j = 0; j < z.size(); ++j) {
      if (sign(raw_grad(i, j)) != sign(S[i]) * sign(z[j])) rep.factorizes = false;
    }
  }
  double sz = 0.0;
  for (const double v : z) sz += sign(v) * v;
  rep.product.assign(S.size(), 0.0);
  rep.predicted.assign(S.size(), 0.0);
  for (std::size_t i = 0; i < S.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) acc += sign(raw_grad(i, j)) * z[j];
    rep.product[i] = acc;
    rep.predicted[i] = sz * sign(S[i]);
  }
  rep.product_identity = rep.product == rep.predicted;
  rep.degenerate = std::all_of(z.begin(), z.end(), [](double v) { return v == 0.0; });
  rep.magnitude = norm_inf(rep.product);
  return rep;
}

/// Adapter form: S = (α/r)·Bᵀ dZ̄ is the upstream gradient at Z_A, and the raw
/// gradient of A is S ⊗ z.
inline AlignmentReport signsgd_alignment_check(const LoraAdapter& adapter, std::span<const double> z,
                                               std::span<const double> d_site, SignConvention sign = {}) {
  require_length(z.size(), adapter.n_in(), "signsgd_alignment_check z");
  require_length(d_site.size(), adapter.n_out(), "signsgd_alignment_check upstream");
  Vector S = matvec(transpose(adapter.B), d_site);
  for (double& v : S) v *= adapter.config.scale();
  return signsgd_alignment_check(outer(S, z), S, z, sign);
}

struct AlignmentSweep {
  std::vector<std::size_t> widths;
  std::vector<Vector> magnitudes;  // [width][seed] ‖sign(S ⊗ z)·z‖∞
  Vector mean_magnitude;           // averaged over seeds
  ExponentFit fit;
  bool identities_hold = true;
};

/// z ~ N(0, I_n), S ~ N(0, I_r) per (width, seed); fits the exponent of ‖g_A z‖∞.
inline AlignmentSweep alignment_sweep(const std::vector<std::size_t>& widths, const std::vector<std::uint64_t>& seeds,
                                      std::size_t rank, SignConvention sign = {}) {
  if (widths.size() < 3) throw InsufficientDataError("alignment_sweep: need at least 3 widths");
  if (seeds.empty() || rank == 0) throw DomainError("alignment_sweep: need seeds and rank >= 1");
  AlignmentSweep out;
  out.widths = widths;
  std::vector<std::pair<double, double>> points;
  for (const std::size_t n : widths) {
    double total = 0.0;
    out.magnitudes.emplace_back();
    for (const std::uint64_t seed : seeds) {
      SeededRng rng = SeededRng(seed).derive(n);
      Vector S(rank), z(n);
      for (double& v : S) v = rng.gaussian();
      for (double& v : z) v = rng.gaussian();
      const AlignmentReport rep = signsgd_alignment_check(outer(S, z), S, z, sign);
      out.identities_hold = out.identities_hold && rep.holds();
      total += rep.magnitude;
      out.magnitudes.back().push_back(rep.magnitude);
    }
    out.mean_magnitude.push_back(total / static_cast<double>(seeds.size()));
    points.emplace_back(static_cast<double>(n), out.mean_magnitude.back());
  }
  out.fit = loglog_fit(points);
  return out;
}

// ---------------------------------------------------------------------------
// Loss linearization.

struct LinearizationPoint {
  double shrink = 0.0;
  double delta_loss = 0.0;  // L_after − L_before
  double inner = 0.0;       // ⟨dZ̄, (α/r)ΔZ_B⟩
  double ratio = 0.0;       // delta_loss / inner; NaN when degenerate
  bool degenerate = false;
};

/// One GD step per shrink factor s with learning rates s·groups; dZ̄ is the loss
/// gradient at the adapter-site output and ΔZ_B the change of B A h.
inline std::vector<LinearizationPoint> loss_linearization_check(const ToyMlpModel& model, std::span<const double> x,
                                                                double y, const ParamGroups& groups,
                                                                std::span<const double> shrinks) {
  require_length(x.size(), model.input_dim(), "loss_linearization_check");
  const Vector h = hidden_features(model, x);
  const MlpForward fwd = mlp_forward_hidden(model, h);
  const MlpGrads grads = mlp_backward(model, fwd.cache, y);
  const double loss_before = 0.5 * grads.residual * grads.residual;
  const Vector zb_before = matvec(model.adapter().B, fwd.cache.z_a);
  std::vector<LinearizationPoint> out;
  for (const double s : shrinks) {
    if (!(s > 0.0)) throw DomainError("loss_linearization_check: shrink factors must be positive");
    ToyMlpModel stepped = model;
    const ParamGroups g = groups.scaled(s);
    stepped.update_adapter([&](Matrix& A, Matrix& B) {
      first_order_step(A, grads.grad_A, B, grads.grad_B, g, GradientProcessor::Identity);
    });
    const MlpForward after = mlp_forward_hidden(stepped, h);
    const double r_after = after.output - y;
    LinearizationPoint p;
    p.shrink = s;
    p.delta_loss = 0.5 * r_after * r_after - loss_before;
    const Vector zb_after = matvec(stepped.adapter().B, after.cache.z_a);
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < zb_after.size(); ++i) {
      const double term = grads.d_site[i] * model.scale() * (zb_after[i] - zb_before[i]);
      p.inner += term;
      abs_sum += std::abs(term);
    }
    p.degenerate = abs_sum == 0.0 || std::abs(p.inner) <= 64.0 * std::numeric_limits<double>::epsilon() * abs_sum;
    p.ratio = p.degenerate ? std::numeric_limits<double>::quiet_NaN() : p.delta_loss / p.inner;
    out.push_back(p);
  }
  return out;
}

}  // namespace loraplus
