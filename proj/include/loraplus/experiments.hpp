// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "loraplus/config.hpp"
#include "loraplus/gamma.hpp"
#include "loraplus/models.hpp"
#include "loraplus/optim.hpp"
#include "loraplus/parallel.hpp"
#include "loraplus/scaling.hpp"

namespace loraplus {

inline constexpr std::string_view kVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Toy MLP training (full batch).

struct TrainPoint {
  std::size_t step = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
};

struct TrainResult {
  std::vector<TrainPoint> curve;  // one point per recorded step reached
  bool diverged = false;
  LoraAdapter adapter;

  [[nodiscard]] double final_test_loss() const {
    return diverged || curve.empty() ? std::numeric_limits<double>::infinity() : curve.back().test_loss;
  }
  [[nodiscard]] double final_train_loss() const {
    return diverged || curve.empty() ? std::numeric_limits<double>::infinity() : curve.back().train_loss;
  }
};

struct TrainProblem {
  Dataset train;
  Dataset test;
  ToyMlpModel model;
};

/// Seed s owns two streams: derive(1) draws train then test inputs, derive(2) the weights.
/// Every cell of a sweep therefore sees the same data and initialization for a given seed.
inline TrainProblem make_problem(const RunConfig& c, std::uint64_t seed) {
  const SeededRng root(seed);
  SeededRng data_rng = root.derive(1);
  SeededRng init_rng = root.derive(2);
  Dataset train = gen_dataset(c.d, c.train_size, data_rng);
  Dataset test = gen_dataset(c.d, c.test_size, data_rng);
  return {std::move(train), std::move(test), init_toy_mlp(c.d, c.n, c.r, c.alpha, c.init, init_rng)};
}

inline bool diverged_loss(double loss) { return !std::isfinite(loss) || loss > kDivergenceThreshold; }

inline TrainResult train_toy_mlp(const RunConfig& c, const ParamGroups& groups, std::uint64_t seed) {
  TrainProblem p = make_problem(c, seed);
  const Matrix h_train = hidden_matrix(p.model, p.train);
  const Matrix h_test = hidden_matrix(p.model, p.test);
  const auto recorded = c.recorded_steps();
  std::size_t next = 0;
  AdamState adam = AdamState::zeros(p.model.adapter().A.size(), p.model.adapter().B.size(), c.adam);
  TrainResult out;
  for (std::size_t step = 0; step < c.steps; ++step) {
    const MlpBatchResult batch = mlp_batch_gradients(p.model, h_train, p.train.targets, true);
    if (diverged_loss(batch.loss)) {
      out.diverged = true;
      break;
    }
    const double mult = schedule_multiplier(c.schedule, step, c.steps);
    p.model.update_adapter([&](Matrix& A, Matrix& B) {
      if (c.optimizer == GradientProcessor::Adam) {
        adamw_step(A, batch.grad_A, B, batch.grad_B, groups, adam, mult);
      } else {
        first_order_step(A, batch.grad_A, B, batch.grad_B, mult == 1.0 ? groups : groups.scaled(mult),
                         c.optimizer);
      }
    });
    if (step + 1 == recorded[next]) {
      TrainPoint pt;
      pt.step = step + 1;
      pt.train_loss = mlp_batch_gradients(p.model, h_train, p.train.targets, false).loss;
      pt.test_loss = mlp_batch_gradients(p.model, h_test, p.test.targets, false).loss;
      if (diverged_loss(pt.train_loss) || diverged_loss(pt.test_loss)) {
        out.diverged = true;
        break;
      }
      out.curve.push_back(pt);
      ++next;
    }
  }
  out.adapter = p.model.adapter();
  return out;
}

// ---------------------------------------------------------------------------
// Learning-rate grid.

struct GridCell {
  double eta_A = 0.0;
  double eta_B = 0.0;
  double train_loss = 0.0;  // final step, mean over seeds; +inf when any seed diverged
  double test_loss = 0.0;
  bool diverged = false;
  bool frontier = false;
  std::vector<TrainResult> runs;  // one per seed
};

struct GridReport {
  std::vector<double> eta_a_grid;
  std::vector<double> eta_b_grid;
  std::vector<std::uint64_t> seeds;
  std::vector<GridCell> cells;           // η_A-major
  std::size_t best = 0;                  // lowest mean test loss
  std::optional<std::size_t> diagonal_best;  // same, restricted to η_A == η_B
  std::vector<std::size_t> frontier;     // test_loss ≤ 1.01 × best

  [[nodiscard]] const GridCell& best_cell() const { return cells[best]; }

  /// Lowest test loss among cells with η_A != η_B.
  [[nodiscard]] std::optional<std::size_t> off_diagonal_best() const {
    std::optional<std::size_t> out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].diverged || cells[i].eta_A == cells[i].eta_B) continue;
      if (!out || cells[i].test_loss < cells[*out].test_loss) out = i;
    }
    return out;
  }
};

inline constexpr double kFrontierSlack = 0.01;

namespace detail {

inline void summarize_cell(GridCell& cell) {
  double train = 0.0, test = 0.0;
  cell.diverged = false;
  for (const auto& run : cell.runs) {
    if (run.diverged) cell.diverged = true;
    train += run.final_train_loss();
    test += run.final_test_loss();
  }
  const auto k = static_cast<double>(cell.runs.size());
  cell.train_loss = cell.diverged ? std::numeric_limits<double>::infinity() : train / k;
  cell.test_loss = cell.diverged ? std::numeric_limits<double>::infinity() : test / k;
}

}  // namespace detail

/// Ranks cells by final test loss; frontier and diagonal best are derived from the same ranking.
inline void rank_grid(GridReport& report) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < report.cells.size(); ++i) {
    const auto& cell = report.cells[i];
    if (cell.diverged) continue;
    if (!best || cell.test_loss < report.cells[*best].test_loss) best = i;
    if (cell.eta_A == cell.eta_B &&
        (!report.diagonal_best || cell.test_loss < report.cells[*report.diagonal_best].test_loss)) {
      report.diagonal_best = i;
    }
  }
  if (!best) throw DivergenceError("lr-grid: every cell diverged");
  report.best = *best;
  const double best_loss = report.cells[*best].test_loss;
  report.frontier.clear();
  for (std::size_t i = 0; i < report.cells.size(); ++i) {
    auto& cell = report.cells[i];
    cell.frontier = !cell.diverged && cell.test_loss / best_loss - 1.0 <= kFrontierSlack;
    if (cell.frontier) report.frontier.push_back(i);
  }
}

inline GridReport run_lr_grid(const RunConfig& c) {
  c.validate();
  GridReport report;
  report.eta_a_grid = c.eta_a_grid;
  report.eta_b_grid = c.eta_b_grid;
  report.seeds = c.seeds;
  for (const double ea : c.eta_a_grid) {
    for (const double eb : c.eta_b_grid) {
      GridCell cell;
      cell.eta_A = ea;
      cell.eta_B = eb;
      cell.runs.resize(c.seeds.size());
      report.cells.push_back(std::move(cell));
    }
  }
  const std::size_t k = c.seeds.size();
  parallel_for(report.cells.size() * k, c.workers, [&](std::size_t job) {
    GridCell& cell = report.cells[job / k];
    cell.runs[job % k] = train_toy_mlp(c, ParamGroups(cell.eta_A, cell.eta_B), c.seeds[job % k]);
  });
  for (auto& cell : report.cells) detail::summarize_cell(cell);
  rank_grid(report);
  return report;
}

namespace detail {

inline void write_curve_rows(std::ostream& os, const std::string& prefix, const TrainResult& run,
                             std::size_t final_step) {
  for (const auto& pt : run.curve) {
    os << prefix << pt.step << ',' << format_float(pt.train_loss) << ',' << format_float(pt.test_loss) << ",0\n";
  }
  if (run.diverged) os << prefix << final_step << ",nan,nan,1\n";
}

}  // namespace detail

/// eta_A,eta_B,seed,step,train_loss,test_loss,diverged
inline void write_grid_csv(std::ostream& os, const GridReport& report, std::size_t steps) {
  os << "eta_A,eta_B,seed,step,train_loss,test_loss,diverged\n";
  for (const auto& cell : report.cells) {
    for (std::size_t s = 0; s < report.seeds.size(); ++s) {
      const std::string prefix = format_float(cell.eta_A) + ',' + format_float(cell.eta_B) + ',' +
                                 std::to_string(report.seeds[s]) + ',';
      detail::write_curve_rows(os, prefix, cell.runs[s], steps);
    }
  }
}

inline std::string grid_summary(const GridReport& report) {
  std::ostringstream os;
  auto cell_text = [&](std::size_t i) {
    const auto& c = report.cells[i];
    return "eta_A=" + format_float(c.eta_A) + " eta_B=" + format_float(c.eta_B) + " test_loss=" +
           format_float(c.test_loss) + " train_loss=" + format_float(c.train_loss);
  };
  os << "best " << cell_text(report.best) << '\n';
  if (report.diagonal_best) {
    os << "diagonal_best " << cell_text(*report.diagonal_best) << '\n';
  } else {
    os << "diagonal_best none\n";
  }
  if (const auto off = report.off_diagonal_best()) os << "off_diagonal_best " << cell_text(*off) << '\n';
  os << "frontier " << report.frontier.size() << " cells (test_loss <= 1.01 x best)\n";
  for (const auto i : report.frontier) {
    os << "  " << cell_text(i) << " ratio=" << format_float(report.cells[i].eta_B / report.cells[i].eta_A) << '\n';
  }
  std::size_t diverged = 0;
  for (const auto& c : report.cells) diverged += c.diverged ? 1 : 0;
  os << "diverged_cells " << diverged << " of " << report.cells.size() << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// LoRA+ ratio comparison: η_B = λη_A, η_A tuned per λ.

struct RatioRow {
  double lambda = 1.0;
  std::vector<GridCell> cells;  // one per η_A
  std::size_t best = 0;
  [[nodiscard]] const GridCell& best_cell() const { return cells[best]; }
};

struct RatioReport {
  std::vector<std::uint64_t> seeds;
  std::vector<RatioRow> rows;  // one per λ

  [[nodiscard]] const RatioRow& row(double lambda) const {
    for (const auto& r : rows) {
      if (r.lambda == lambda) return r;
    }
    throw ConfigError("ratio-compare: lambda " + format_float(lambda) + " was not run");
  }
};

inline RatioReport run_ratio_compare(const RunConfig& c) {
  c.validate();
  RatioReport report;
  report.seeds = c.seeds;
  for (const double lambda : c.lambdas) {
    RatioRow row;
    row.lambda = lambda;
    for (const double ea : c.eta_a_grid) {
      const ParamGroups g = loraplus_groups(ea, lambda, RatioPolicy::Baseline);
      GridCell cell;
      cell.eta_A = g.eta_A();
      cell.eta_B = g.eta_B();
      cell.runs.resize(c.seeds.size());
      row.cells.push_back(std::move(cell));
    }
    report.rows.push_back(std::move(row));
  }
  const std::size_t k = c.seeds.size();
  const std::size_t per_row = c.eta_a_grid.size() * k;
  parallel_for(report.rows.size() * per_row, c.workers, [&](std::size_t job) {
    GridCell& cell = report.rows[job / per_row].cells[(job % per_row) / k];
    cell.runs[job % k] = train_toy_mlp(c, ParamGroups(cell.eta_A, cell.eta_B), c.seeds[job % k]);
  });
  for (auto& row : report.rows) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < row.cells.size(); ++i) {
      detail::summarize_cell(row.cells[i]);
      if (!row.cells[i].diverged && (!best || row.cells[i].test_loss < row.cells[*best].test_loss)) best = i;
    }
    if (!best) throw DivergenceError("ratio-compare: every eta_A diverged at lambda " + format_float(row.lambda));
    row.best = *best;
  }
  return report;
}

/// lambda,eta_A,eta_B,seed,step,train_loss,test_loss,diverged
inline void write_ratio_curves_csv(std::ostream& os, const RatioReport& report, std::size_t steps) {
  os << "lambda,eta_A,eta_B,seed,step,train_loss,test_loss,diverged\n";
  for (const auto& row : report.rows) {
    for (const auto& cell : row.cells) {
      for (std::size_t s = 0; s < report.seeds.size(); ++s) {
        const std::string prefix = format_float(row.lambda) + ',' + format_float(cell.eta_A) + ',' +
                                   format_float(cell.eta_B) + ',' + std::to_string(report.seeds[s]) + ',';
        detail::write_curve_rows(os, prefix, cell.runs[s], steps);
      }
    }
  }
}

/// lambda,best_eta_A,best_eta_B,best_test_loss,best_train_loss
inline void write_ratio_summary_csv(std::ostream& os, const RatioReport& report) {
  os << "lambda,best_eta_A,best_eta_B,best_test_loss,best_train_loss\n";
  for (const auto& row : report.rows) {
    const auto& b = row.best_cell();
    os << format_float(row.lambda) << ',' << format_float(b.eta_A) << ',' << format_float(b.eta_B) << ','
       << format_float(b.test_loss) << ',' << format_float(b.train_loss) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Width-sweep scenarios.

struct Scenario {
  std::string name;
  std::string description;
  SweepSpec spec;
  DynamicsSetting setting;     // symbolic counterpart supplying expected slopes
  std::vector<SlopeTarget> targets;
  bool alignment = false;      // SignSGD alignment sweep instead of a training sweep
  bool informational = false;
};

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"prop32",       "prop32-init2",         "prop31-init1",
                                              "prop31-init2", "mlp-signsgd-loraplus", "assumption-a1"};
  return names;
}

namespace detail {

inline std::vector<std::size_t> default_widths() {
  std::vector<std::size_t> w;
  for (std::size_t n = 128; n <= 8192; n *= 2) w.push_back(n);
  return w;
}

/// Expected exponent of a recorded quantity, read off the symbolic trajectory.
inline Exponent symbolic_exponent(const GammaTrajectory& traj, std::string_view quantity, int t) {
  const GammaStep& s = traj.at(t);
  auto need = [&](const std::optional<Exponent>& v) {
    if (!v) throw DomainError("symbolic trajectory has no update term at t=1");
    return *v;
  };
  if (quantity == "f" || quantity == "z_b" || quantity == "delta_f" || quantity == "delta_zb") {
    if (quantity == "delta_f" || quantity == "delta_zb") {
      return max(max(need(s.delta1), need(s.delta2)), need(s.delta3));
    }
    return s.output;
  }
  if (quantity == "b" || quantity == "b_norm") return s.state_b;
  if (quantity == "ax" || quantity == "a_z") return s.state_a;
  if (quantity == "delta1") return need(s.delta1);
  if (quantity == "delta2") return need(s.delta2);
  if (quantity == "delta3") return need(s.delta3);
  throw ConfigError("no symbolic counterpart for quantity '" + std::string(quantity) + "'");
}

inline std::string scenario_list() {
  std::string s;
  for (const auto& n : scenario_names()) s += (s.empty() ? "" : ", ") + n;
  return s;
}

}  // namespace detail

/// Builds a named scenario; width, seed, κ, step, sampling and input settings in `c`
/// override the scenario defaults when present.
inline Scenario make_scenario(const std::string& name, const RunConfig& c) {
  Scenario sc;
  sc.name = name;
  SweepSpec& s = sc.spec;
  s.widths = c.widths.value_or(detail::default_widths());
  s.seeds = c.seeds;
  s.steps = 3;
  s.workers = c.workers;
  const Exponent minus_one(-1), zero(0), minus_half(-1, 2);
  std::vector<std::pair<std::string, double>> quantities;  // name, tolerance
  if (name == "prop32" || name == "prop32-init2") {
    sc.description = "decoupled eta_a = kappa/n, eta_b = kappa; all update terms stay order one";
    s.scheme = name == "prop32" ? InitScheme::Init1 : InitScheme::Init2;
    s.rule = LrRule{minus_one, zero, 0.25, 0.25};
    sc.setting = {OptimizerFamily::GdDecoupled, s.scheme, minus_one, zero, 10};
    quantities = {{"delta1", 0.15}, {"delta2", 0.15}, {"delta3", 0.15}, {"f", 0.15}};
  } else if (name == "prop31-init1") {
    sc.description = "shared eta = kappa n^-1/2 from Init1; output decays like n^-1/2";
    s.scheme = InitScheme::Init1;
    s.rule = LrRule::shared(minus_half, 0.25);
    sc.setting = DynamicsSetting::shared(OptimizerFamily::GdShared, s.scheme, minus_half);
    quantities = {{"f", 0.1}};
  } else if (name == "prop31-init2") {
    sc.description = "shared eta = kappa n^-1/2 from Init2; a^T x grows like n^1/2";
    s.scheme = InitScheme::Init2;
    s.rule = LrRule::shared(minus_half, 1e-3);
    sc.setting = DynamicsSetting::shared(OptimizerFamily::GdShared, s.scheme, minus_half);
    quantities = {{"ax", 0.1}};
  } else if (name == "mlp-signsgd-loraplus") {
    sc.description = "toy MLP, SignSGD, eta_A = kappa/n, eta_B = kappa (reported only)";
    s.model = SweepModel::Mlp;
    s.processor = GradientProcessor::Sign;
    s.mlp_init = MlpInit::Dense;
    s.rule = LrRule{minus_one, zero, 0.01, 0.01};
    sc.setting = {OptimizerFamily::AdamDecoupled, InitScheme::Init1, minus_one, zero, 10};
    quantities = {{"delta1", 0.15}, {"delta2", 0.15}, {"z_b", 0.15}};
    sc.informational = true;
  } else if (name == "assumption-a1") {
    sc.description = "SignSGD alignment: |sign(S (x) z) z| grows like n";
    sc.alignment = true;
    sc.setting = {OptimizerFamily::AdamDecoupled, InitScheme::Init1, minus_one, zero, 10};
  } else {
    throw ConfigError("unknown scenario '" + name + "' (valid: " + detail::scenario_list() + ")");
  }
  if (c.kappa_a) s.rule.kappa_a = *c.kappa_a;
  if (c.kappa_b) s.rule.kappa_b = *c.kappa_b;
  if (c.sweep_steps) s.steps = *c.sweep_steps;
  if (c.sampling) {
    if (*c.sampling == "coupled") s.sampling = SweepSampling::Coupled;
    else if (*c.sampling == "independent") s.sampling = SweepSampling::Independent;
    else throw ConfigError("unknown sampling '" + *c.sampling + "' (expected coupled|independent)");
  }
  if (c.input) {
    if (*c.input == "rademacher") s.input = InputKind::Rademacher;
    else if (*c.input == "gaussian") s.input = InputKind::Gaussian;
    else throw ConfigError("unknown input '" + *c.input + "' (expected rademacher|gaussian)");
  }
  if (sc.alignment) {
    sc.targets = {{"g_a_z", 1, static_cast<double>(kSquaredNormExponent), 0.1}};
    return sc;
  }
  try {
    s.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  const GammaTrajectory traj = run_recursion(sc.setting);
  for (const int t : {2, 3}) {
    for (const auto& [q, tol] : quantities) {
      sc.targets.push_back({q, t, detail::symbolic_exponent(traj, q, t).to_double(), tol});
    }
  }
  return sc;
}

struct ScenarioOutcome {
  Scenario scenario;
  std::optional<WidthSweepReport> report;
  std::optional<AlignmentSweep> alignment;
  EfficiencyVerdict verdict;
};

inline ScenarioOutcome run_scenario(const Scenario& sc, SignConvention sign = {}) {
  ScenarioOutcome out;
  out.scenario = sc;
  if (sc.alignment) {
    out.alignment = alignment_sweep(sc.spec.widths, sc.spec.seeds, 4, sign);
    SlopeCheck check;
    check.target = sc.targets.front();
    check.fit = out.alignment->fit;
    check.pass = out.alignment->identities_hold &&
                 std::abs(check.fit->slope - check.target.expected) <= check.target.tolerance;
    if (!out.alignment->identities_hold) check.error = "alignment identity violated";
    out.verdict.scenario = sc.name;
    out.verdict.checks.push_back(check);
    return out;
  }
  out.report = run_width_sweep(sc.spec);
  out.verdict = evaluate_verdict(*out.report, sc.name, sc.targets, sc.informational);
  return out;
}

/// Same columns as WidthSweepReport::write_csv.
inline void write_scenario_csv(std::ostream& os, const ScenarioOutcome& outcome) {
  if (outcome.report) {
    outcome.report->write_csv(os);
    return;
  }
  os << "width,seed,step,quantity,magnitude,diverged\n";
  const auto& a = *outcome.alignment;
  for (std::size_t w = 0; w < a.widths.size(); ++w) {
    for (std::size_t s = 0; s < outcome.scenario.spec.seeds.size(); ++s) {
      os << a.widths[w] << ',' << outcome.scenario.spec.seeds[s] << ",1,g_a_z," << format_float(a.magnitudes[w][s])
         << ",0\n";
    }
  }
}

inline std::string verdict_json(const EfficiencyVerdict& v) {
  nlohmann::ordered_json j;
  j["scenario"] = v.scenario;
  j["informational"] = v.informational;
  j["pass"] = v.pass();
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : v.checks) {
    nlohmann::ordered_json e;
    e["quantity"] = c.target.quantity;
    e["t"] = c.target.t;
    e["expected"] = c.target.expected;
    e["tolerance"] = c.target.tolerance;
    if (c.fit) {
      e["slope"] = c.fit->slope;
      e["r_squared"] = c.fit->r_squared;
    } else {
      e["error"] = c.error;
    }
    e["pass"] = c.pass;
    j["checks"].push_back(e);
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Run manifest.

inline std::string manifest_text(const RunConfig& c, std::string_view command) {
  std::ostringstream os;
  os << "command " << command << '\n';
  os << "version " << kVersion << '\n';
  os << "config_hash " << config_hash(c) << '\n';
  os << "seeds";
  for (const auto s : c.seeds) os << ' ' << s;
  os << "\nfloat_format %.9g\n";
  os << "config\n" << canonical_text(c);
  return os.str();
}

}  // namespace loraplus
