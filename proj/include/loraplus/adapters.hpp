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
#include <string_view>

#include "loraplus/numerics.hpp"

namespace loraplus {

/// Init1: B = 0, A ~ N(0, 1/n_in).  Init2: A = 0, B ~ N(0, 1).
enum class InitScheme { Init1, Init2 };

inline std::string_view to_string(InitScheme s) noexcept {
  return s == InitScheme::Init1 ? "init1" : "init2";
}

inline InitScheme parse_init_scheme(std::string_view text) {
  if (text == "init1" || text == "Init1" || text == "1") return InitScheme::Init1;
  if (text == "init2" || text == "Init2" || text == "2") return InitScheme::Init2;
  throw ConfigError("unknown init scheme '" + std::string(text) + "' (expected init1|init2)");
}

struct LoraConfig {
  std::size_t rank = 1;
  double alpha = 1.0;
  InitScheme scheme = InitScheme::Init1;

  /// The α/r multiplier applied by the layer; never folded into A or B.
  [[nodiscard]] double scale() const noexcept { return alpha / static_cast<double>(rank); }

  void validate() const {
    if (rank == 0) throw DomainError("LoraConfig: rank must be >= 1");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError("LoraConfig: alpha must be positive");
  }
};

/// Trainable pair with A: r × n_in and B: n_out × r. The layer weight is W* + (α/r)·B·A.
struct LoraAdapter {
  Matrix A;
  Matrix B;
  LoraConfig config;

  [[nodiscard]] std::size_t rank() const noexcept { return A.rows(); }
  [[nodiscard]] std::size_t n_in() const noexcept { return A.cols(); }
  [[nodiscard]] std::size_t n_out() const noexcept { return B.rows(); }

  void validate() const {
    config.validate();
    if (A.rows() != config.rank || B.cols() != config.rank) {
      throw DimensionError("LoraAdapter: A rows and B cols must equal the rank");
    }
    if (A.cols() == 0 || B.rows() == 0) throw DimensionError("LoraAdapter: empty factor");
  }
};

inline LoraAdapter init_adapter(const LoraConfig& config, std::size_t n_in, std::size_t n_out,
                                SeededRng& rng) {
  config.validate();
  if (n_in == 0 || n_out == 0) throw DimensionError("init_adapter: n_in and n_out must be >= 1");
  LoraAdapter adapter;
  adapter.config = config;
  if (config.scheme == InitScheme::Init1) {
    adapter.A = gaussian_matrix(config.rank, n_in, std::sqrt(1.0 / static_cast<double>(n_in)), rng);
    adapter.B = Matrix::zeros(n_out, config.rank);
  } else {
    adapter.A = Matrix::zeros(config.rank, n_in);
    adapter.B = gaussian_matrix(n_out, config.rank, 1.0, rng);
  }
  return adapter;
}

/// (α/r)·B·A, shape n_out × n_in.
inline Matrix effective_delta(const LoraAdapter& adapter) {
  adapter.validate();
  return adapter.config.scale() * matmul(adapter.B, adapter.A);
}

/// Z_A = A z and Z_B = B Z_A. Z_B excludes the α/r multiplier.
struct LoraFeatures {
  Vector z_a;
  Vector z_b;
};

inline LoraFeatures lora_features(const LoraAdapter& adapter, std::span<const double> z) {
  require_length(z.size(), adapter.n_in(), "lora_features");
  LoraFeatures out;
  out.z_a = matvec(adapter.A, z);
  out.z_b = matvec(adapter.B, out.z_a);
  return out;
}

/// Σ_i (A z)_i B[:, i]; the same product as B(Az) evaluated column by column.
inline Vector column_decomposition(const LoraAdapter& adapter, std::span<const double> z) {
  require_length(z.size(), adapter.n_in(), "column_decomposition");
  const Vector weights = matvec(adapter.A, z);
  Vector out(adapter.n_out(), 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (std::size_t row = 0; row < out.size(); ++row) out[row] += weights[i] * adapter.B(row, i);
  }
  return out;
}

// Text container:
//   loraplus-adapter 1
//   rank <r>
//   alpha <α>
//   scheme init1|init2
//   A <rows> <cols>
//   <one matrix row per line, values %.17g>
//   B <rows> <cols>
//   ...
// 17 significant digits make the round trip exact.

namespace detail {

inline void write_matrix(std::ostream& os, std::string_view name, const Matrix& m) {
  os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j != 0) os << ' ';
      os << m(i, j);
    }
    os << '\n';
  }
}

inline Matrix read_matrix(std::istream& is, std::string_view name) {
  std::string tag;
  std::size_t rows = 0;
  std::size_t cols = 0;
  if (!(is >> tag >> rows >> cols) || tag != name) {
    throw ConfigError("adapter file: expected matrix '" + std::string(name) + "'");
  }
  Matrix m(rows, cols);
  for (double& v : m.values()) {
    if (!(is >> v)) throw ConfigError("adapter file: truncated matrix " + std::string(name));
  }
  return m;
}

}  // namespace detail

inline void save_adapter(std::ostream& os, const LoraAdapter& adapter) {
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << std::setprecision(17);
  os << "loraplus-adapter 1\n";
  os << "rank " << adapter.config.rank << '\n';
  os << "alpha " << adapter.config.alpha << '\n';
  os << "scheme " << to_string(adapter.config.scheme) << '\n';
  detail::write_matrix(os, "A", adapter.A);
  detail::write_matrix(os, "B", adapter.B);
  os.flags(flags);
  os.precision(precision);
}

inline LoraAdapter load_adapter(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "loraplus-adapter" || version != 1) {
    throw ConfigError("adapter file: bad header");
  }
  LoraAdapter adapter;
  std::string key;
  std::string scheme;
  if (!(is >> key >> adapter.config.rank) || key != "rank") throw ConfigError("adapter file: missing rank");
  if (!(is >> key >> adapter.config.alpha) || key != "alpha") throw ConfigError("adapter file: missing alpha");
  if (!(is >> key >> scheme) || key != "scheme") throw ConfigError("adapter file: missing scheme");
  adapter.config.scheme = parse_init_scheme(scheme);
  adapter.A = detail::read_matrix(is, "A");
  adapter.B = detail::read_matrix(is, "B");
  adapter.validate();
  if (!adapter.A.all_finite() || !adapter.B.all_finite()) throw ConfigError("adapter file: non-finite entry");
  return adapter;
}

}  // namespace loraplus
