#pragma once

#include <array>
#include <functional>

#include <Eigen/Core>

#include "afemtr/fem.hpp"

namespace afemtr::estimate {

using fem::Bary;
using fem::Vec2;

/// Data of  -div(a grad u) + b u = q  with a scalar coefficient a.
struct EllipticData {
  fem::CellCoefficient coeff;
  /// Gradient of the coefficient; treated as zero when empty.
  std::function<Vec2(int cell, const Bary& b)> coeff_gradient;
  double reaction = 0.0;
  fem::SourceFunction source;

  static EllipticData constant(double a, double b, fem::SourceFunction q);
};

enum class NormKind { Energy, LInf };

/// Per-element indicators and the three global parts (volume, interior
/// jumps, Neumann fluxes) of a residual estimator.
struct EstimatorBreakdown {
  NormKind kind = NormKind::Energy;
  mesh::MeshPtr mesh;
  /// Energy: squared indicators xi_T^2. LInf: max-form contributions.
  Eigen::VectorXd per_cell;
  std::array<double, 3> parts{0.0, 0.0, 0.0};
  /// Multiplier of the L-infinity total, |log h_max|^2; 1 for energy.
  double scale = 1.0;
  /// Energy: sqrt(sum parts^2). LInf: scale * sum parts.
  double total = 0.0;

  /// Squared per-cell quantities on a common scale for Dörfler marking.
  Eigen::VectorXd marking_indicators() const;
};

/// Energy-norm residual estimator:
///   xi_1^2 = sum_T h_T^2 |q + div(a grad u) - b u|^2_{L2(T)}
///   xi_2^2 = sum_{interior e} h_e |[a grad u . n]|^2_{L2(e)}
///   xi_3^2 = sum_{Neumann e} h_e |a grad u . n|^2_{L2(e)}
/// Edge contributions are split evenly between the two adjacent cells.
EstimatorBreakdown energy_estimator(const fem::FeFunction& u, const EllipticData& data);

/// Max-form residual estimator of the same three residuals, sampled at
/// quadrature points and vertices (cells) or Gauss points and endpoints
/// (edges); the total carries |log h_max|^2.
EstimatorBreakdown linf_estimator(const fem::FeFunction& u, const EllipticData& data);

/// Per-cell sum of the marking indicators of both breakdowns.
Eigen::VectorXd combined_indicator(const EstimatorBreakdown& state,
                                   const EstimatorBreakdown* adjoint = nullptr);

}  // namespace afemtr::estimate
