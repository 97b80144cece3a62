// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>

#include "loraplus/adapters.hpp"
#include "loraplus/numerics.hpp"

namespace loraplus {

// ---------------------------------------------------------------------------
// Synthetic regression data: X ~ N(0, I_d), y = sin(mean(x)).

struct Dataset {
  Matrix inputs;  // N × d
  Vector targets;

  [[nodiscard]] std::size_t size() const noexcept { return inputs.rows(); }
  [[nodiscard]] std::size_t dim() const noexcept { return inputs.cols(); }
};

inline double sine_of_mean(std::span<const double> row) {
  double acc = 0.0;
  for (double v : row) acc += v;
  return std::sin(acc / static_cast<double>(row.size()));
}

/// Labels an input matrix with the sin-of-mean target.
inline Dataset make_dataset(Matrix inputs) {
  Dataset data;
  data.targets.resize(inputs.rows());
  for (std::size_t i = 0; i < inputs.rows(); ++i) data.targets[i] = sine_of_mean(inputs.row(i));
  data.inputs = std::move(inputs);
  return data;
}

inline Dataset gen_dataset(std::size_t d, std::size_t count, SeededRng& rng) {
  return make_dataset(gaussian_matrix(count, d, 1.0, rng));
}

inline void write_dataset_csv(std::ostream& os, const Dataset& data) {
  const auto precision = os.precision();
  os << std::setprecision(17);
  for (std::size_t j = 0; j < data.dim(); ++j) os << "x_" << j << ',';
  os << "y\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j) os << data.inputs(i, j) << ',';
    os << data.targets[i] << '\n';
  }
  os.precision(precision);
}

inline Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("dataset csv: empty input");
  std::size_t columns = 1;
  for (char c : line) columns += (c == ',');
  if (columns < 2 || line.rfind("x_0", 0) != 0) throw ConfigError("dataset csv: bad header");
  const std::size_t d = columns - 1;
  Vector values;
  Vector targets;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(row, cell, ',')) {
      const double v = std::stod(cell);
      if (count < d) values.push_back(v);
      else targets.push_back(v);
      ++count;
    }
    if (count != columns) throw ConfigError("dataset csv: row has " + std::to_string(count) + " cells");
  }
  Dataset data;
  data.inputs = Matrix(targets.size(), d, std::move(values));
  data.targets = std::move(targets);
  return data;
}

// ---------------------------------------------------------------------------
// Toy linear model f(x) = (W* + b aᵀ) x.

struct ToyLinearModel {
  Vector w_star;  // frozen, length n
  Vector a;       // trainable, length n
  double b = 0.0; // trainable

  [[nodiscard]] std::size_t width() const noexcept { return a.size(); }

  /// The rank-1 specialisation of an adapter: A = aᵀ (1 × n), B = [b], α/r = 1.
  static ToyLinearModel from_adapter(const LoraAdapter& adapter, Vector w_star) {
    if (adapter.rank() != 1 || adapter.n_out() != 1) {
      throw DimensionError("ToyLinearModel: adapter must be rank 1 with a single output");
    }
    if (adapter.config.scale() != 1.0) throw DomainError("ToyLinearModel: α/r must equal 1");
    require_length(w_star.size(), adapter.n_in(), "ToyLinearModel w_star");
    ToyLinearModel m;
    m.w_star = std::move(w_star);
    m.a.assign(adapter.A.values().begin(), adapter.A.values().end());
    m.b = adapter.B(0, 0);
    return m;
  }
};

/// Analysis-mode model of width n: W* = 0 and (a, b) drawn per scheme.
inline ToyLinearModel init_toy_linear(std::size_t n, InitScheme scheme, SeededRng& rng) {
  const LoraAdapter adapter = init_adapter(LoraConfig{1, 1.0, scheme}, n, 1, rng);
  return ToyLinearModel::from_adapter(adapter, Vector(n, 0.0));
}

inline double toy_linear_forward(const ToyLinearModel& m, std::span<const double> x) {
  require_length(x.size(), m.width(), "toy_linear_forward");
  require_length(m.w_star.size(), m.width(), "toy_linear_forward w_star");
  return dot(m.w_star, x) + m.b * dot(m.a, x);
}

struct LinearGrads {
  Vector grad_a;
  double grad_b = 0.0;
  double residual = 0.0;  // U = f(x) - y
};

/// Gradients of ½(f(x) − y)² with respect to a and b.
inline LinearGrads toy_linear_backward(const ToyLinearModel& m, std::span<const double> x, double y) {
  LinearGrads g;
  g.residual = toy_linear_forward(m, x) - y;
  g.grad_b = dot(m.a, x) * g.residual;
  g.grad_a.resize(x.size());
  const double coeff = m.b * g.residual;
  for (std::size_t i = 0; i < x.size(); ++i) g.grad_a[i] = coeff * x[i];
  return g;
}

// ---------------------------------------------------------------------------
// Toy MLP f(x) = W_out ReLU((α/r) B A ReLU(W_in x)).

inline double relu(double v) noexcept { return v > 0.0 ? v : 0.0; }

class ToyMlpModel {
 public:
  ToyMlpModel(Matrix w_in, Matrix w_out, LoraAdapter adapter)
      : w_in_(std::move(w_in)), w_out_(std::move(w_out)), adapter_(std::move(adapter)) {
    adapter_.validate();
    const std::size_t n = w_in_.rows();
    if (w_out_.rows() != 1 || w_out_.cols() != n) throw DimensionError("ToyMlpModel: W_out must be 1 x n");
    if (adapter_.n_in() != n || adapter_.n_out() != n) {
      throw DimensionError("ToyMlpModel: adapter must map width n to width n");
    }
  }

  [[nodiscard]] const Matrix& w_in() const noexcept { return w_in_; }
  [[nodiscard]] const Matrix& w_out() const noexcept { return w_out_; }
  [[nodiscard]] const LoraAdapter& adapter() const noexcept { return adapter_; }
  [[nodiscard]] std::size_t input_dim() const noexcept { return w_in_.cols(); }
  [[nodiscard]] std::size_t width() const noexcept { return w_in_.rows(); }
  [[nodiscard]] std::size_t rank() const noexcept { return adapter_.rank(); }
  [[nodiscard]] double scale() const noexcept { return adapter_.config.scale(); }

  /// Bumped on every adapter mutation; forward caches record it.
  [[nodiscard]] std::uint64_t version() const noexcept { return version_; }

  /// Mutates A and B in place via fn(A, B). Shapes must be preserved.
  template <class Fn>
  void update_adapter(Fn&& fn) {
    const std::size_t ar = adapter_.A.rows(), ac = adapter_.A.cols();
    const std::size_t br = adapter_.B.rows(), bc = adapter_.B.cols();
    fn(adapter_.A, adapter_.B);
    ++version_;
    if (adapter_.A.rows() != ar || adapter_.A.cols() != ac || adapter_.B.rows() != br ||
        adapter_.B.cols() != bc) {
      throw DimensionError("ToyMlpModel::update_adapter: factor shape changed");
    }
  }

  void set_adapter(LoraAdapter adapter) {
    update_adapter([&](Matrix& a, Matrix& b) {
      a = std::move(adapter.A);
      b = std::move(adapter.B);
    });
  }

 private:
  Matrix w_in_;
  Matrix w_out_;
  LoraAdapter adapter_;
  std::uint64_t version_ = 0;
};

/// Dense: W_in ~ N(0,1), W_out ~ N(0,1/n), A ~ N(0,1/n), B ~ N(0,1).
/// Init1/Init2: the pure adapter schemes (BA = 0 at start).
enum class MlpInit { Dense, Init1, Init2 };

inline std::string_view to_string(MlpInit i) noexcept {
  switch (i) {
    case MlpInit::Dense: return "dense";
    case MlpInit::Init1: return "init1";
    case MlpInit::Init2: return "init2";
  }
  return "?";
}

inline MlpInit parse_mlp_init(std::string_view text) {
  if (text == "dense") return MlpInit::Dense;
  if (text == "init1") return MlpInit::Init1;
  if (text == "init2") return MlpInit::Init2;
  throw ConfigError("unknown MLP init '" + std::string(text) + "' (expected dense|init1|init2)");
}

inline ToyMlpModel init_toy_mlp(std::size_t d, std::size_t n, std::size_t r, double alpha, MlpInit init,
                                SeededRng& rng) {
  if (d == 0 || n == 0 || r == 0) throw DimensionError("init_toy_mlp: d, n, r must be >= 1");
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix w_in = gaussian_matrix(n, d, 1.0, rng);
  Matrix w_out = gaussian_matrix(1, n, std::sqrt(inv_n), rng);
  LoraAdapter adapter;
  if (init == MlpInit::Dense) {
    adapter.config = LoraConfig{r, alpha, InitScheme::Init2};
    adapter.A = gaussian_matrix(r, n, std::sqrt(inv_n), rng);
    adapter.B = gaussian_matrix(n, r, 1.0, rng);
  } else {
    const auto scheme = init == MlpInit::Init1 ? InitScheme::Init1 : InitScheme::Init2;
    adapter = init_adapter(LoraConfig{r, alpha, scheme}, n, n, rng);
  }
  return ToyMlpModel(std::move(w_in), std::move(w_out), std::move(adapter));
}

struct MlpCache {
  Vector h;       // ReLU(W_in x), the adapter input
  Vector z_a;     // A h
  Vector z_site;  // (α/r) B z_a, the adapter-site output before the second ReLU
  double output = 0.0;
  std::uint64_t version = 0;
};

struct MlpForward {
  double output = 0.0;
  MlpCache cache;
};

inline Vector hidden_features(const ToyMlpModel& m, std::span<const double> x) {
  Vector h = matvec(m.w_in(), x);
  for (double& v : h) v = relu(v);
  return h;
}

inline MlpForward mlp_forward_hidden(const ToyMlpModel& m, Vector h) {
  MlpForward out;
  out.cache.z_a = matvec(m.adapter().A, h);
  out.cache.z_site = matvec(m.adapter().B, out.cache.z_a);
  const double s = m.scale();
  double acc = 0.0;
  const auto w = m.w_out().row(0);
  for (std::size_t i = 0; i < out.cache.z_site.size(); ++i) {
    out.cache.z_site[i] *= s;
    acc += w[i] * relu(out.cache.z_site[i]);
  }
  out.output = acc;
  out.cache.output = acc;
  out.cache.h = std::move(h);
  out.cache.version = m.version();
  return out;
}

inline MlpForward mlp_forward(const ToyMlpModel& m, std::span<const double> x) {
  require_length(x.size(), m.input_dim(), "mlp_forward");
  return mlp_forward_hidden(m, hidden_features(m, x));
}

struct MlpGrads {
  Matrix grad_A;   // r × n
  Matrix grad_B;   // n × r
  Vector d_site;   // ∂L/∂(adapter-site output)
  double residual = 0.0;
};

/// Gradients of ½(f(x) − y)² for A and B; ReLU'(0) = 0. W_in and W_out get none.
inline MlpGrads mlp_backward(const ToyMlpModel& m, const MlpCache& cache, double y) {
  if (cache.version != m.version()) {
    throw ConsistencyError("mlp_backward: cache was produced for a different parameter version");
  }
  const std::size_t n = m.width();
  const std::size_t r = m.rank();
  const double s = m.scale();
  MlpGrads g;
  g.residual = cache.output - y;
  g.d_site.assign(n, 0.0);
  const auto w = m.w_out().row(0);
  for (std::size_t i = 0; i < n; ++i) g.d_site[i] = cache.z_site[i] > 0.0 ? g.residual * w[i] : 0.0;
  // ∂L/∂B = (α/r) dZ̄ ⊗ Z_A ;  ∂L/∂A = (α/r) (Bᵀ dZ̄) ⊗ h
  g.grad_B = Matrix(n, r);
  Vector d_za(r, 0.0);
  const Matrix& B = m.adapter().B;
  for (std::size_t i = 0; i < n; ++i) {
    const double di = g.d_site[i];
    if (di == 0.0) continue;
    for (std::size_t k = 0; k < r; ++k) {
      g.grad_B(i, k) = s * di * cache.z_a[k];
      d_za[k] += s * B(i, k) * di;
    }
  }
  g.grad_A = outer(d_za, cache.h);
  return g;
}

/// Precomputed ReLU(W_in x) rows for a dataset; W_in is frozen so these never change.
inline Matrix hidden_matrix(const ToyMlpModel& m, const Dataset& data) {
  require_length(data.dim(), m.input_dim(), "hidden_matrix");
  Matrix h(data.size(), m.width());
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto x = data.inputs.row(s);
    auto out = h.row(s);
    for (std::size_t i = 0; i < m.width(); ++i) {
      const auto wi = m.w_in().row(i);
      double acc = 0.0;
      for (std::size_t j = 0; j < wi.size(); ++j) acc += wi[j] * x[j];
      out[i] = relu(acc);
    }
  }
  return h;
}

struct MlpBatchResult {
  double loss = 0.0;  // mean ½(f − y)²
  Matrix grad_A;
  Matrix grad_B;
};

/// Mean loss and its gradient over a dataset whose hidden rows were precomputed.
inline MlpBatchResult mlp_batch_gradients(const ToyMlpModel& m, const Matrix& hidden, std::span<const double> targets,
                                          bool want_grads = true) {
  require_length(hidden.cols(), m.width(), "mlp_batch_gradients hidden");
  require_length(targets.size(), hidden.rows(), "mlp_batch_gradients targets");
  if (hidden.rows() == 0) throw DomainError("mlp_batch_gradients: empty dataset");
  const std::size_t n = m.width();
  const std::size_t r = m.rank();
  const double s = m.scale();
  const Matrix& A = m.adapter().A;
  const Matrix& B = m.adapter().B;
  const auto w = m.w_out().row(0);
  const double inv_count = 1.0 / static_cast<double>(hidden.rows());

  MlpBatchResult out;
  if (want_grads) {
    out.grad_A = Matrix(r, n);
    out.grad_B = Matrix(n, r);
  }
  Vector z_a(r);
  Vector z_site(n);
  Vector d_za(r);
  for (std::size_t sample = 0; sample < hidden.rows(); ++sample) {
    const auto h = hidden.row(sample);
    for (std::size_t k = 0; k < r; ++k) {
      const auto ak = A.row(k);
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += ak[j] * h[j];
      z_a[k] = acc;
    }
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto bi = B.row(i);
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += bi[k] * z_a[k];
      z_site[i] = s * acc;
      f += w[i] * relu(z_site[i]);
    }
    const double residual = f - targets[sample];
    out.loss += 0.5 * residual * residual * inv_count;
    if (!want_grads) continue;
    const double u = residual * inv_count;
    std::fill(d_za.begin(), d_za.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (!(z_site[i] > 0.0)) continue;
      const double di = u * w[i];
      const auto bi = B.row(i);
      auto gbi = out.grad_B.row(i);
      for (std::size_t k = 0; k < r; ++k) {
        gbi[k] += s * di * z_a[k];
        d_za[k] += s * bi[k] * di;
      }
    }
    for (std::size_t k = 0; k < r; ++k) {
      const double dk = d_za[k];
      if (dk == 0.0) continue;
      auto gak = out.grad_A.row(k);
      for (std::size_t j = 0; j < n; ++j) gak[j] += dk * h[j];
    }
  }
  return out;
}

inline double batch_loss(const ToyMlpModel& m, const Dataset& data) {
  if (data.size() == 0) throw DomainError("batch_loss: empty dataset");
  return mlp_batch_gradients(m, hidden_matrix(m, data), data.targets, false).loss;
}

inline double batch_loss(const ToyLinearModel& m, const Dataset& data) {
  if (data.size() == 0) throw DomainError("batch_loss: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double u = toy_linear_forward(m, data.inputs.row(i)) - data.targets[i];
    total += 0.5 * u * u;
  }
  return total / static_cast<double>(data.size());
}

}  // namespace loraplus
