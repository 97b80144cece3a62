// SPDX-License-Identifier: Apache-2.0
// loraplus: learning-rate grids, width sweeps, symbolic derivations, ratio
// comparisons and the self-check suite.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "loraplus/checks.hpp"

namespace fs = std::filesystem;
using namespace loraplus;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  std::string seeds;
  std::size_t workers = 0;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Config file (key = value text or JSON)");
  cmd->add_option("--out", o.out_dir, "Output directory");
  cmd->add_option("--seeds", o.seeds, "Comma-separated seed list");
  cmd->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig load(ExperimentKind kind, const CommonOptions& o) {
  RunConfig c = o.config_path.empty() ? default_config(kind) : parse_config(kind, read_file(o.config_path));
  if (!o.seeds.empty()) apply_setting(c, "seeds", o.seeds);
  if (o.workers > 0) c.workers = o.workers;
  if (!o.out_dir.empty()) c.out_dir = o.out_dir;
  c.validate();
  return c;
}

std::ofstream open_out(const RunConfig& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  std::ofstream os(fs::path(c.out_dir) / name);
  if (!os) throw std::runtime_error("cannot write " + (fs::path(c.out_dir) / name).string());
  return os;
}

void write_manifest(const RunConfig& c, std::string_view command) {
  open_out(c, "manifest.txt") << manifest_text(c, command);
}

int cmd_lr_grid(const CommonOptions& o) {
  const RunConfig c = load(ExperimentKind::LrGrid, o);
  const GridReport report = run_lr_grid(c);
  {
    auto os = open_out(c, "grid.csv");
    write_grid_csv(os, report, c.steps);
  }
  const std::string summary = grid_summary(report);
  open_out(c, "grid_summary.txt") << summary;
  {
    auto os = open_out(c, "best_adapter.txt");
    save_adapter(os, report.best_cell().runs.front().adapter);
  }
  write_manifest(c, "lr-grid");
  std::cout << summary;
  return 0;
}

int cmd_ratio_compare(const CommonOptions& o) {
  const RunConfig c = load(ExperimentKind::RatioCompare, o);
  const RatioReport report = run_ratio_compare(c);
  {
    auto os = open_out(c, "ratio_curves.csv");
    write_ratio_curves_csv(os, report, c.steps);
  }
  std::ostringstream summary;
  write_ratio_summary_csv(summary, report);
  open_out(c, "ratio_summary.csv") << summary.str();
  const RatioRow* best = &report.rows.front();
  for (const auto& row : report.rows) {
    if (row.best_cell().test_loss < best->best_cell().test_loss) best = &row;
  }
  {
    auto os = open_out(c, "best_adapter.txt");
    save_adapter(os, best->best_cell().runs.front().adapter);
  }
  write_manifest(c, "ratio-compare");
  std::cout << summary.str();
  return 0;
}

int cmd_width_sweep(const CommonOptions& o, const std::string& scenario_flag) {
  RunConfig c = load(ExperimentKind::WidthSweep, o);
  if (!scenario_flag.empty()) c.scenario = scenario_flag;
  const ScenarioOutcome outcome = run_scenario(make_scenario(c.scenario, c));
  {
    auto os = open_out(c, "width_sweep.csv");
    write_scenario_csv(os, outcome);
  }
  const std::string text = outcome.verdict.to_text();
  open_out(c, "verdict.txt") << text;
  open_out(c, "verdict.json") << verdict_json(outcome.verdict);
  write_manifest(c, "width-sweep");
  std::cout << text;
  return outcome.verdict.pass() ? 0 : kExitFailure;
}

int cmd_gamma(const std::vector<std::string>& words) {
  if (words.empty() || words.size() > 2) {
    throw ConfigError("gamma expects FAMILY [SCHEME], e.g. 'gd-shared init1'");
  }
  const OptimizerFamily family = parse_family(words[0]);
  const InitScheme scheme = words.size() == 2 ? parse_init_scheme(words[1]) : InitScheme::Init1;
  std::cout << derivation_text(solve_efficiency(family, scheme));
  return 0;
}

int cmd_check(const CommonOptions& o, bool mutate_sign, bool mutate_swap) {
  CheckOptions opt;
  if (mutate_sign) opt.sign.at_zero = 1.0;
  opt.swap_lr_groups = mutate_swap;
  if (o.workers > 0) opt.workers = o.workers;
  const auto results = run_check_suite(opt);
  std::ostringstream failures;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    if (!r.pass) failures << r.name << ": " << r.detail << '\n';
  }
  const bool ok = all_pass(results);
  if (!ok) {
    std::cerr << "failed checks:\n" << failures.str();
    if (!o.out_dir.empty()) {
      fs::create_directories(o.out_dir);
      std::ofstream(fs::path(o.out_dir) / "check_failures.txt") << failures.str();
    }
  }
  return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoRA+ laboratory: learning-rate grids, width sweeps and gamma-exponent derivations"};
  app.require_subcommand(1);

  CommonOptions grid_opts, sweep_opts, ratio_opts, check_opts;
  auto* grid = app.add_subcommand("lr-grid", "Train one toy MLP per (eta_A, eta_B) cell and seed");
  add_common(grid, grid_opts);

  auto* sweep = app.add_subcommand("width-sweep", "Fit width exponents for a named scenario");
  add_common(sweep, sweep_opts);
  std::string scenario;
  sweep->add_option("--scenario", scenario, "Scenario name (overrides the config)");

  auto* gamma = app.add_subcommand("gamma", "Solve the efficiency system for a setting family");
  std::vector<std::string> gamma_words;
  gamma->add_option("setting", gamma_words, "FAMILY [SCHEME], e.g. gd-shared init1")->required();

  auto* ratio = app.add_subcommand("ratio-compare", "Tune eta_A per ratio lambda = eta_B / eta_A");
  add_common(ratio, ratio_opts);

  auto* check = app.add_subcommand("check", "Run the invariant suite");
  add_common(check, check_opts);
  bool mutate_sign = false, mutate_swap = false;
  check->add_flag("--mutate-sign-zero", mutate_sign, "Fault injection: sign(0) = +1");
  check->add_flag("--mutate-swap-groups", mutate_swap, "Fault injection: swap (eta_A, eta_B)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*grid) return cmd_lr_grid(grid_opts);
    if (*sweep) return cmd_width_sweep(sweep_opts, scenario);
    if (*gamma) return cmd_gamma(gamma_words);
    if (*ratio) return cmd_ratio_compare(ratio_opts);
    if (*check) return cmd_check(check_opts, mutate_sign, mutate_swap);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitConfig;
}
