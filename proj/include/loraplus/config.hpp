// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration. Two equivalent surface syntaxes:
//
//   key = value            # flat text; '#' starts a comment, blank lines ignored
//   { "key": value, ... }  # JSON object; arrays stand in for comma lists
//
// Lists are comma separated. Learning-rate grids accept either an explicit list
// or logspace(lo, hi, count), count points log-uniform from lo to hi inclusive.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "loraplus/errors.hpp"
#include "loraplus/models.hpp"
#include "loraplus/optim.hpp"

namespace loraplus {

enum class ExperimentKind { LrGrid, RatioCompare, WidthSweep };

inline std::string_view to_string(ExperimentKind k) noexcept {
  switch (k) {
    case ExperimentKind::LrGrid: return "lr-grid";
    case ExperimentKind::RatioCompare: return "ratio-compare";
    case ExperimentKind::WidthSweep: return "width-sweep";
  }
  return "?";
}

inline ExperimentKind parse_experiment(std::string_view text) {
  if (text == "lr-grid") return ExperimentKind::LrGrid;
  if (text == "ratio-compare") return ExperimentKind::RatioCompare;
  if (text == "width-sweep") return ExperimentKind::WidthSweep;
  throw ConfigError("unknown experiment '" + std::string(text) + "' (expected lr-grid|ratio-compare|width-sweep)");
}

/// count points from lo to hi, evenly spaced in log10.
inline std::vector<double> logspace(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi > 0.0) || count == 0) throw ConfigError("logspace: need lo, hi > 0 and count >= 1");
  if (count == 1) return {lo};
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

struct RunConfig {
  ExperimentKind experiment = ExperimentKind::LrGrid;
  std::size_t d = 5;
  std::size_t n = 100;
  std::size_t r = 4;
  double alpha = 4.0;
  std::size_t train_size = 1000;
  std::size_t test_size = 100;
  MlpInit init = MlpInit::Dense;
  GradientProcessor optimizer = GradientProcessor::Identity;
  AdamConfig adam;
  LrSchedule schedule = LrSchedule::Constant;
  std::size_t steps = 200;
  std::vector<std::size_t> checkpoints;  // empty: final step only
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<double> eta_a_grid = logspace(1e-4, 1e1, 10);
  std::vector<double> eta_b_grid = logspace(1e-4, 1e1, 10);
  std::vector<double> lambdas{1.0, 16.0};
  std::string scenario = "prop32";
  std::optional<std::vector<std::size_t>> widths;
  std::optional<double> kappa_a;
  std::optional<double> kappa_b;
  std::optional<int> sweep_steps;
  std::optional<std::string> sampling;
  std::optional<std::string> input;
  std::size_t workers = 1;
  std::string out_dir = "out";

  /// Checkpoint steps, sorted, always including the final step.
  [[nodiscard]] std::vector<std::size_t> recorded_steps() const {
    std::vector<std::size_t> out = checkpoints;
    out.push_back(steps);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  void validate() const {
    if (d == 0 || n == 0 || r == 0) throw ConfigError("d, n and r must be positive");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (train_size == 0 || test_size == 0) throw ConfigError("train_size and test_size must be positive");
    if (steps == 0) throw ConfigError("steps must be positive");
    for (const auto c : checkpoints) {
      if (c == 0 || c > steps) throw ConfigError("checkpoints must lie in [1, steps]");
    }
    if (seeds.empty()) throw ConfigError("seeds must be nonempty");
    if (eta_a_grid.empty() || eta_b_grid.empty()) throw ConfigError("learning-rate grids must be nonempty");
    for (const double v : eta_a_grid) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("learning rates must be positive and finite");
    }
    for (const double v : eta_b_grid) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("learning rates must be positive and finite");
    }
    if (lambdas.empty()) throw ConfigError("lambdas must be nonempty");
    for (const double v : lambdas) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("lambdas must be positive and finite");
    }
    if (workers == 0) throw ConfigError("workers must be >= 1");
    try {
      adam.validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
};

/// Per-experiment defaults; lr-grid follows the full-batch GD protocol, ratio-compare uses AdamW.
inline RunConfig default_config(ExperimentKind kind) {
  RunConfig c;
  c.experiment = kind;
  if (kind == ExperimentKind::RatioCompare) {
    c.optimizer = GradientProcessor::Adam;
    c.eta_a_grid = logspace(1e-4, 1e-1, 8);
    c.eta_b_grid = c.eta_a_grid;
  }
  if (kind == ExperimentKind::WidthSweep) c.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  return c;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is{std::string(text)};
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + text + "'");
  }
}

inline std::uint64_t to_unsigned(const std::string& key, const std::string& text) {
  if (text.empty() || !std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw ConfigError("key '" + key + "': expected a nonnegative integer, got '" + text + "'");
  }
  try {
    return std::stoull(text);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': integer out of range");
  }
}

inline std::vector<double> to_grid(const std::string& key, const std::string& text) {
  if (text.rfind("logspace(", 0) == 0) {
    if (text.back() != ')') throw ConfigError("key '" + key + "': malformed logspace(...)");
    const auto args = split_list(std::string_view(text).substr(9, text.size() - 10));
    if (args.size() != 3) throw ConfigError("key '" + key + "': logspace takes (lo, hi, count)");
    return logspace(to_double(key, args[0]), to_double(key, args[1]), to_unsigned(key, args[2]));
  }
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(to_double(key, item));
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

template <class T>
std::vector<T> to_unsigned_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(static_cast<T>(to_unsigned(key, item)));
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

inline std::string json_scalar(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  throw ConfigError("unsupported JSON value " + v.dump());
}

}  // namespace detail

/// Applies one key to the config. Unknown keys are errors so typos surface.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  try {
    if (key == "experiment") {
      if (parse_experiment(value) != c.experiment) {
        throw ConfigError("config is for '" + value + "' but the command is '" +
                          std::string(to_string(c.experiment)) + "'");
      }
    } else if (key == "d") {
      c.d = to_unsigned(key, value);
    } else if (key == "n") {
      c.n = to_unsigned(key, value);
    } else if (key == "r") {
      c.r = to_unsigned(key, value);
    } else if (key == "alpha") {
      c.alpha = to_double(key, value);
    } else if (key == "train_size") {
      c.train_size = to_unsigned(key, value);
    } else if (key == "test_size") {
      c.test_size = to_unsigned(key, value);
    } else if (key == "init") {
      c.init = parse_mlp_init(value);
    } else if (key == "optimizer") {
      c.optimizer = parse_processor(value);
    } else if (key == "beta1") {
      c.adam.beta1 = to_double(key, value);
    } else if (key == "beta2") {
      c.adam.beta2 = to_double(key, value);
    } else if (key == "eps") {
      c.adam.eps = to_double(key, value);
    } else if (key == "weight_decay") {
      c.adam.weight_decay = to_double(key, value);
    } else if (key == "schedule") {
      c.schedule = parse_schedule(value);
    } else if (key == "steps") {
      c.steps = to_unsigned(key, value);
    } else if (key == "checkpoints") {
      c.checkpoints = to_unsigned_list<std::size_t>(key, value);
    } else if (key == "seeds") {
      c.seeds = to_unsigned_list<std::uint64_t>(key, value);
    } else if (key == "eta_grid") {
      c.eta_a_grid = to_grid(key, value);
      c.eta_b_grid = c.eta_a_grid;
    } else if (key == "eta_a_grid") {
      c.eta_a_grid = to_grid(key, value);
    } else if (key == "eta_b_grid") {
      c.eta_b_grid = to_grid(key, value);
    } else if (key == "lambdas") {
      c.lambdas = to_grid(key, value);
    } else if (key == "scenario") {
      c.scenario = value;
    } else if (key == "widths") {
      c.widths = to_unsigned_list<std::size_t>(key, value);
    } else if (key == "kappa_a") {
      c.kappa_a = to_double(key, value);
    } else if (key == "kappa_b") {
      c.kappa_b = to_double(key, value);
    } else if (key == "sweep_steps") {
      c.sweep_steps = static_cast<int>(to_unsigned(key, value));
    } else if (key == "sampling") {
      c.sampling = value;
    } else if (key == "input") {
      c.input = value;
    } else if (key == "workers") {
      c.workers = to_unsigned(key, value);
    } else if (key == "out") {
      c.out_dir = value;
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

inline RunConfig parse_config(ExperimentKind kind, std::string_view text) {
  RunConfig c = default_config(kind);
  const std::string body = detail::trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid JSON config: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("JSON config must be an object");
    for (const auto& [key, value] : doc.items()) {
      std::string flat;
      if (value.is_array()) {
        for (std::size_t i = 0; i < value.size(); ++i) flat += (i ? "," : "") + detail::json_scalar(value[i]);
      } else {
        flat = detail::json_scalar(value);
      }
      apply_setting(c, key, flat);
    }
  } else {
    std::istringstream is{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
      }
      apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
  }
  c.validate();
  return c;
}

/// Sorted key=value lines with %.17g floats; equal configs give equal text.
inline std::string canonical_text(const RunConfig& c) {
  std::map<std::string, std::string> kv;
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto list = [&](const auto& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) s += ',';
      if constexpr (std::is_floating_point_v<std::decay_t<decltype(values[i])>>) {
        s += num(values[i]);
      } else {
        s += std::to_string(values[i]);
      }
    }
    return s;
  };
  kv["experiment"] = to_string(c.experiment);
  kv["d"] = std::to_string(c.d);
  kv["n"] = std::to_string(c.n);
  kv["r"] = std::to_string(c.r);
  kv["alpha"] = num(c.alpha);
  kv["train_size"] = std::to_string(c.train_size);
  kv["test_size"] = std::to_string(c.test_size);
  kv["init"] = to_string(c.init);
  kv["optimizer"] = to_string(c.optimizer);
  kv["beta1"] = num(c.adam.beta1);
  kv["beta2"] = num(c.adam.beta2);
  kv["eps"] = num(c.adam.eps);
  kv["weight_decay"] = num(c.adam.weight_decay);
  kv["schedule"] = to_string(c.schedule);
  kv["steps"] = std::to_string(c.steps);
  kv["checkpoints"] = list(c.recorded_steps());
  kv["seeds"] = list(c.seeds);
  kv["eta_a_grid"] = list(c.eta_a_grid);
  kv["eta_b_grid"] = list(c.eta_b_grid);
  kv["lambdas"] = list(c.lambdas);
  kv["scenario"] = c.scenario;
  if (c.widths) kv["widths"] = list(*c.widths);
  if (c.kappa_a) kv["kappa_a"] = num(*c.kappa_a);
  if (c.kappa_b) kv["kappa_b"] = num(*c.kappa_b);
  if (c.sweep_steps) kv["sweep_steps"] = std::to_string(*c.sweep_steps);
  if (c.sampling) kv["sampling"] = *c.sampling;
  if (c.input) kv["input"] = *c.input;
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

/// FNV-1a 64 of the canonical text, as 16 hex digits. Workers and output
/// directory do not affect results and are excluded.
inline std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : canonical_text(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace loraplus
