#pragma once

#include <variant>

#include "afemtr/mesh.hpp"

namespace afemtr::prox {

using mesh::CellField;

struct Zero {};

/// beta * ||z||_{L1}
struct L1 {
  double beta = 0.0;
};

/// Indicator of { lo <= z <= hi, integral of z == volume }.
struct BoxVolume {
  double lo = 0.0;
  double hi = 1.0;
  double volume = 0.0;  ///< absolute target, e.g. v0 * |Omega|
};

using ProxFunction = std::variant<Zero, L1, BoxVolume>;

/// Feasibility slack used by phi_value for BoxVolume.
inline constexpr double kFeasibilityTol = 1e-9;

/// Checks the parameter invariants; `domain_area` is needed for BoxVolume.
void validate(const ProxFunction& phi, double domain_area);

/// Extended-real value; +infinity outside the BoxVolume set.
double phi_value(const ProxFunction& phi, const CellField& z);

/// argmin_y (1/2r)||y - z||^2 + phi(y) in the area-weighted L2 geometry.
CellField prox_apply(const ProxFunction& phi, const CellField& z, double r);

struct ProjectionInfo {
  double multiplier = 0.0;
  int iterations = 0;
};

/// Weighted projection onto the BoxVolume set: y = clamp(z - mu, lo, hi) with
/// mu from bisection on the volume.
CellField project_box_volume(const BoxVolume& set, const CellField& z, ProjectionInfo* info = nullptr);

}  // namespace afemtr::prox
