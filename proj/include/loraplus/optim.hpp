// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "loraplus/numerics.hpp"

namespace loraplus {

/// Learning rates for the A-group (A or a) and B-group (B or b).
class ParamGroups {
 public:
  ParamGroups(double eta_A, double eta_B) : eta_A_(eta_A), eta_B_(eta_B) {
    if (!(eta_A > 0.0) || !(eta_B > 0.0) || !std::isfinite(eta_A) || !std::isfinite(eta_B)) {
      throw DomainError("ParamGroups: learning rates must be positive and finite");
    }
  }

  /// Classical single-learning-rate training.
  static ParamGroups shared(double eta) { return ParamGroups(eta, eta); }

  [[nodiscard]] double eta_A() const noexcept { return eta_A_; }
  [[nodiscard]] double eta_B() const noexcept { return eta_B_; }
  [[nodiscard]] double ratio() const noexcept { return eta_B_ / eta_A_; }

  [[nodiscard]] ParamGroups scaled(double factor) const { return {eta_A_ * factor, eta_B_ * factor}; }
  [[nodiscard]] ParamGroups swapped() const { return {eta_B_, eta_A_}; }

  friend bool operator==(const ParamGroups&, const ParamGroups&) = default;

 private:
  double eta_A_;
  double eta_B_;
};

enum class RatioPolicy {
  LoraPlus,  // λ > 1 required
  Baseline,  // any λ > 0, including the standard-LoRA λ = 1
};

/// η_B = λ·η_A.
inline ParamGroups loraplus_groups(double eta_A, double lambda, RatioPolicy policy = RatioPolicy::LoraPlus) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("loraplus_groups: ratio must be positive");
  if (policy == RatioPolicy::LoraPlus && !(lambda > 1.0)) {
    throw DomainError("loraplus_groups: ratio must exceed 1 (use RatioPolicy::Baseline for standard LoRA)");
  }
  return ParamGroups(eta_A, lambda * eta_A);
}

enum class GradientProcessor { Identity, Sign, Adam };

inline std::string_view to_string(GradientProcessor p) noexcept {
  switch (p) {
    case GradientProcessor::Identity: return "gd";
    case GradientProcessor::Sign: return "sign";
    case GradientProcessor::Adam: return "adamw";
  }
  return "?";
}

inline GradientProcessor parse_processor(std::string_view text) {
  if (text == "gd" || text == "identity") return GradientProcessor::Identity;
  if (text == "sign" || text == "signsgd") return GradientProcessor::Sign;
  if (text == "adam" || text == "adamw") return GradientProcessor::Adam;
  throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected gd|sign|adamw)");
}

/// Elementwise sign with sign(0) = 0.
inline double sign_of(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

namespace detail {

inline void apply_group(std::span<double> params, std::span<const double> grads, double eta,
                        GradientProcessor processor) {
  if (processor == GradientProcessor::Sign) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= eta * sign_of(grads[i]);
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= eta * grads[i];
  }
}

}  // namespace detail

/// θ_A ← θ_A − η_A·g_A and θ_B ← θ_B − η_B·g_B with g = processor(raw gradient).
inline void first_order_step(std::span<double> a_group, std::span<const double> grad_a, std::span<double> b_group,
                             std::span<const double> grad_b, const ParamGroups& groups,
                             GradientProcessor processor) {
  if (processor == GradientProcessor::Adam) {
    throw DomainError("first_order_step: use adamw_step for the adaptive-moment processor");
  }
  require_length(grad_a.size(), a_group.size(), "first_order_step A-group");
  require_length(grad_b.size(), b_group.size(), "first_order_step B-group");
  detail::apply_group(a_group, grad_a, groups.eta_A(), processor);
  detail::apply_group(b_group, grad_b, groups.eta_B(), processor);
}

inline void first_order_step(Matrix& A, const Matrix& grad_A, Matrix& B, const Matrix& grad_B,
                             const ParamGroups& groups, GradientProcessor processor) {
  require_same_shape(A, grad_A, "first_order_step A");
  require_same_shape(B, grad_B, "first_order_step B");
  first_order_step(A.values(), grad_A.values(), B.values(), grad_B.values(), groups, processor);
}

/// Toy linear model: a is the A-group, b the B-group.
inline void first_order_step(Vector& a, const Vector& grad_a, double& b, double grad_b, const ParamGroups& groups,
                             GradientProcessor processor) {
  first_order_step(std::span<double>(a), grad_a, std::span<double>(&b, 1), std::span<const double>(&grad_b, 1),
                   groups, processor);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw DomainError("AdamConfig: betas must lie in [0, 1)");
    }
    if (!(eps >= 0.0) || !(weight_decay >= 0.0)) throw DomainError("AdamConfig: eps and weight decay must be >= 0");
  }
};

struct AdamState {
  AdamConfig config;
  Vector m_A, v_A, m_B, v_B;
  std::int64_t step = 0;

  static AdamState zeros(std::size_t a_size, std::size_t b_size, AdamConfig config = {}) {
    config.validate();
    AdamState s;
    s.config = config;
    s.m_A.assign(a_size, 0.0);
    s.v_A.assign(a_size, 0.0);
    s.m_B.assign(b_size, 0.0);
    s.v_B.assign(b_size, 0.0);
    return s;
  }
};

namespace detail {

inline void adam_group(std::span<double> params, std::span<const double> grads, Vector& m, Vector& v, double lr,
                       const AdamConfig& c, double correction1, double correction2) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    params[i] -= lr * c.weight_decay * params[i];
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

}  // namespace detail

/// Bias-corrected AdamW with decoupled weight decay; η_A drives the A-group, η_B the B-group.
/// lr_multiplier applies a schedule factor to both groups.
inline void adamw_step(std::span<double> a_group, std::span<const double> grad_a, std::span<double> b_group,
                       std::span<const double> grad_b, const ParamGroups& groups, AdamState& state,
                       double lr_multiplier = 1.0) {
  state.config.validate();
  require_length(grad_a.size(), a_group.size(), "adamw_step A-group");
  require_length(grad_b.size(), b_group.size(), "adamw_step B-group");
  require_length(state.m_A.size(), a_group.size(), "adamw_step A state");
  require_length(state.m_B.size(), b_group.size(), "adamw_step B state");
  if (!(lr_multiplier >= 0.0)) throw DomainError("adamw_step: negative learning-rate multiplier");
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.config.beta1, t);
  const double c2 = 1.0 - std::pow(state.config.beta2, t);
  detail::adam_group(a_group, grad_a, state.m_A, state.v_A, groups.eta_A() * lr_multiplier, state.config, c1, c2);
  detail::adam_group(b_group, grad_b, state.m_B, state.v_B, groups.eta_B() * lr_multiplier, state.config, c1, c2);
}

inline void adamw_step(Matrix& A, const Matrix& grad_A, Matrix& B, const Matrix& grad_B, const ParamGroups& groups,
                       AdamState& state, double lr_multiplier = 1.0) {
  require_same_shape(A, grad_A, "adamw_step A");
  require_same_shape(B, grad_B, "adamw_step B");
  adamw_step(A.values(), grad_A.values(), B.values(), grad_B.values(), groups, state, lr_multiplier);
}

enum class LrSchedule { Constant, LinearDecay };

inline LrSchedule parse_schedule(std::string_view text) {
  if (text == "constant") return LrSchedule::Constant;
  if (text == "linear") return LrSchedule::LinearDecay;
  throw ConfigError("unknown schedule '" + std::string(text) + "' (expected constant|linear)");
}

inline std::string_view to_string(LrSchedule s) noexcept {
  return s == LrSchedule::Constant ? "constant" : "linear";
}

/// Multiplier for the zero-based step `step` of `total` steps.
inline double schedule_multiplier(LrSchedule schedule, std::size_t step, std::size_t total) noexcept {
  if (schedule == LrSchedule::Constant || total == 0) return 1.0;
  return 1.0 - static_cast<double>(step) / static_cast<double>(total);
}

}  // namespace loraplus
