// Copyright 2026 The ccmtune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// White-point preserving 3x3 colour correction matrix.
//
// The six free parameters are the off-diagonal entries. The diagonal of row i
// is 1 - (phi_ij + phi_ik), so every row sums to one and neutral pixels map
// to themselves for any parameter value.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>

#include <json.hpp>

#include "ccmtune/error.hpp"
#include "ccmtune/image.hpp"

namespace ccmtune {

/// Storage order of the free parameters.
enum class OffDiag : std::size_t { p12 = 0, p13, p21, p23, p31, p32 };

inline constexpr std::size_t kNumParams = 6;
inline constexpr std::array<const char*, kNumParams> kParamNames = {"12", "13", "21", "23", "31", "32"};

/// (row, col) of each free parameter, zero based.
inline constexpr std::array<std::array<std::size_t, 2>, kNumParams> kParamCells = {{
    {0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}}};

using ParamVector = std::array<double, kNumParams>;

struct CcmParams {
  ParamVector off_diag{};
  double tau = 0.25;

  double& operator[](OffDiag k) noexcept { return off_diag[static_cast<std::size_t>(k)]; }
  double operator[](OffDiag k) const noexcept { return off_diag[static_cast<std::size_t>(k)]; }

  /// Diagonal deviation phi_ii of a row.
  double row_deviation(std::size_t row) const noexcept {
    return off_diag[2 * row] + off_diag[2 * row + 1];
  }

  /// True when every stored value and every row deviation lies within tau.
  bool feasible(double slack = 0.0) const noexcept {
    for (double v : off_diag) {
      if (!(std::abs(v) <= tau + slack)) return false;
    }
    for (std::size_t r = 0; r < 3; ++r) {
      if (!(std::abs(row_deviation(r)) <= tau + slack)) return false;
    }
    return true;
  }

  friend bool operator==(const CcmParams&, const CcmParams&) = default;
};

struct CcmMatrix {
  std::array<std::array<double, 3>, 3> m{};

  static CcmMatrix identity() noexcept {
    CcmMatrix out;
    for (std::size_t i = 0; i < 3; ++i) out.m[i][i] = 1.0;
    return out;
  }

  double row_sum(std::size_t row) const noexcept { return m[row][0] + m[row][1] + m[row][2]; }

  friend bool operator==(const CcmMatrix&, const CcmMatrix&) = default;
};

inline CcmMatrix materialize(const CcmParams& params) noexcept {
  CcmMatrix out;
  for (std::size_t k = 0; k < kNumParams; ++k) {
    out.m[kParamCells[k][0]][kParamCells[k][1]] = params.off_diag[k];
  }
  for (std::size_t r = 0; r < 3; ++r) out.m[r][r] = 1.0 - params.row_deviation(r);
  return out;
}

/// Per-pixel out_i = sum_j M_ij in_j. No clamping.
template <typename T>
Image<T> apply(const CcmMatrix& matrix, const Image<T>& img) {
  Image<T> out(img.width(), img.height());
  const auto r = img.channel(0);
  const auto g = img.channel(1);
  const auto b = img.channel(2);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto& row = matrix.m[c];
    auto dst = out.channel(c);
    for (std::size_t p = 0; p < dst.size(); ++p) {
      dst[p] = static_cast<T>(row[0] * static_cast<double>(r[p]) + row[1] * static_cast<double>(g[p]) +
                              row[2] * static_cast<double>(b[p]));
    }
  }
  return out;
}

/// Clamp each value into [-tau, tau], then shrink any row whose deviation
/// still exceeds tau radially onto the cap.
inline CcmParams project(CcmParams params) noexcept {
  const double tau = params.tau;
  for (double& v : params.off_diag) v = std::clamp(v, -tau, tau);
  for (std::size_t r = 0; r < 3; ++r) {
    const double dev = std::abs(params.row_deviation(r));
    if (dev > tau) {
      const double s = tau / dev;
      double& a = params.off_diag[2 * r];
      double& b = params.off_diag[2 * r + 1];
      a *= s;
      b *= s;
      // Rounding can leave the sum an ulp above tau; shrink the larger entry
      // until it is not, so a second projection is a no-op.
      while (std::abs(a + b) > tau) {
        double& big = std::abs(a) >= std::abs(b) ? a : b;
        big = std::nextafter(big, 0.0);
      }
    }
  }
  return params;
}

/// Adjoint of apply(materialize(phi), img) with respect to phi:
/// dL/dphi_ij = sum_p G_i(p) * (X_j(p) - X_i(p)).
template <typename T>
ParamVector pullback(const Image<T>& img, const Image<T>& cotangent) {
  if (!img.same_shape(cotangent)) {
    throw DimensionMismatch("cotangent " + std::to_string(cotangent.width()) + "x" +
                            std::to_string(cotangent.height()) + " does not match image " +
                            std::to_string(img.width()) + "x" + std::to_string(img.height()));
  }
  ParamVector grad{};
  for (std::size_t k = 0; k < kNumParams; ++k) {
    const auto [i, j] = kParamCells[k];
    const auto gi = cotangent.channel(i);
    const auto xi = img.channel(i);
    const auto xj = img.channel(j);
    double acc = 0.0;
    for (std::size_t p = 0; p < gi.size(); ++p) {
      acc += static_cast<double>(gi[p]) * (static_cast<double>(xj[p]) - static_cast<double>(xi[p]));
    }
    grad[k] = acc;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// JSON export / import

inline nlohmann::json phi_to_json(const CcmParams& params) {
  nlohmann::json phi = nlohmann::json::object();
  for (std::size_t k = 0; k < kNumParams; ++k) phi[kParamNames[k]] = params.off_diag[k];
  return phi;
}

/// Reads a {"12":..,"13":..,...} object. Missing keys are an error.
inline ParamVector phi_from_json(const nlohmann::json& phi) {
  if (!phi.is_object()) throw ConfigError("phi must be an object", "phi");
  ParamVector out{};
  for (std::size_t k = 0; k < kNumParams; ++k) {
    const auto it = phi.find(kParamNames[k]);
    if (it == phi.end() || !it->is_number()) {
      throw ConfigError(std::string("phi.") + kParamNames[k] + " missing or not a number", "phi");
    }
    out[k] = it->get<double>();
  }
  return out;
}

inline nlohmann::json matrix_to_json(const CcmMatrix& matrix) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : matrix.m) rows.push_back({row[0], row[1], row[2]});
  return rows;
}

/// Matrix export document: version, row-major matrix, free parameters, tau.
inline nlohmann::json to_json(const CcmParams& params) {
  return {{"version", 1},
          {"matrix", matrix_to_json(materialize(params))},
          {"phi", phi_to_json(params)},
          {"tau", params.tau}};
}

inline constexpr double kRowSumTolerance = 1e-6;

/// Parses the "matrix" member of an export document. Throws ConfigError when
/// malformed and MatrixConstraintError when a row does not sum to one.
inline CcmMatrix matrix_from_json(const nlohmann::json& doc, double row_sum_tol = kRowSumTolerance) {
  const nlohmann::json* rows = &doc;
  if (doc.is_object()) {
    const auto it = doc.find("matrix");
    if (it == doc.end()) throw ConfigError("missing \"matrix\"", "matrix");
    rows = &*it;
  }
  if (!rows->is_array() || rows->size() != 3) throw ConfigError("matrix must be 3 rows", "matrix");
  CcmMatrix out;
  for (std::size_t r = 0; r < 3; ++r) {
    const auto& row = (*rows)[r];
    if (!row.is_array() || row.size() != 3) throw ConfigError("matrix rows must have 3 entries", "matrix");
    for (std::size_t c = 0; c < 3; ++c) {
      if (!row[c].is_number()) throw ConfigError("matrix entries must be numbers", "matrix");
      out.m[r][c] = row[c].get<double>();
      if (!std::isfinite(out.m[r][c])) throw ConfigError("matrix entries must be finite", "matrix");
    }
  }
  for (std::size_t r = 0; r < 3; ++r) {
    if (std::abs(out.row_sum(r) - 1.0) > row_sum_tol) {
      throw MatrixConstraintError("matrix row " + std::to_string(r + 1) + " sums to " +
                                  std::to_string(out.row_sum(r)) + ", expected 1");
    }
  }
  return out;
}

/// Parses phi + tau from an export document.
inline CcmParams params_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("matrix document must be an object");
  CcmParams p;
  p.off_diag = phi_from_json(doc.value("phi", nlohmann::json()));
  const auto tau = doc.find("tau");
  if (tau == doc.end() || !tau->is_number()) throw ConfigError("tau missing or not a number", "tau");
  p.tau = tau->get<double>();
  return p;
}

}  // namespace ccmtune
