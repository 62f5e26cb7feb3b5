#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>

#include <Eigen/Cholesky>

#include "afemtr/estimate.hpp"
#include "afemtr/fem.hpp"
#include "afemtr/mesh.hpp"
#include "afemtr/prox.hpp"
#include "afemtr/tr_core.hpp"

namespace afemtr::problems {

using fem::FeFunction;
using fem::SpacePtr;
using mesh::CellField;
using mesh::MeshPtr;
using mesh::Point;

/// Bookkeeping of the most recent solve/estimate/mark/refine loop.
struct AfemReport {
  int passes = 0;
  bool capped = false;   ///< stopped by the dof budget before the check passed
  double estimate = 0.0;  ///< estimator sum at the final pass
  std::size_t dofs = 0;
};

/// L-shaped domain (0,1)^2 minus [1/2,1]^2, n x n grid split along diagonals.
/// n = 8 gives 225 P2 dofs.
MeshPtr lshape_mesh(int n = 8);

/// Symmetric half of a topology example on an n x n criss-cross grid.
/// Example 1: {x + y <= 1}, Dirichlet on x = 0, Neumann elsewhere.
/// Example 2: (0,1) x (0,1/2), Dirichlet on x = 0 for 0.4 <= y <= 0.6.
MeshPtr symmetry_half_domain(int example, int n = 64);

// ---------------------------------------------------------------------------
// Sparse Poisson control:  min 1/2 |u - u_d|^2 + alpha/2 |z|^2 + beta |z|_1
// subject to -Laplace u = z, u = 0 on the boundary.

class PoissonControlProblem final : public tr::Oracle {
 public:
  struct Options {
    double alpha = 1e-4;
    double beta = 1e-2;
    std::function<double(Point)> target;  ///< u_d; sin(2 pi x) sin(2 pi y) when empty
    int degree = 2;
    std::size_t dof_budget = 10000;
    double theta = 0.05;
    double solve_tol = 1e-10;  ///< relative Euclidean residual of every linear solve
    bool flip_adjoint = false;  ///< debug: negate the adjoint (breaks the gradient)
  };

  struct State {
    FeFunction u;
    double residual = 0.0;  ///< dual norm of the discrete residual
  };

  PoissonControlProblem(Options options, MeshPtr initial);

  const Options& options() const { return opt_; }
  prox::ProxFunction phi() const { return prox::L1{opt_.beta}; }
  CellField initial_control() const { return CellField(mesh_, 0.0); }

  State state(const CellField& z) const;
  State adjoint(const FeFunction& u) const;
  /// g_T = -(1/|T|) integral_T lambda + alpha z_T.
  CellField gradient_field(const CellField& z, const FeFunction& lambda) const;
  /// Smooth part 1/2 |u - u_d|^2 + alpha/2 |z|^2.
  double objective(const CellField& z, const FeFunction& u) const;
  double smooth_value(const CellField& z) const { return objective(z, state(z).u); }
  CellField smooth_gradient(const CellField& z) const;
  estimate::EstimatorBreakdown state_estimator(const CellField& z, const FeFunction& u) const;
  estimate::EstimatorBreakdown adjoint_estimator(const FeFunction& u, const FeFunction& lambda) const;

  tr::GradientEval gradient(const CellField& z, double tau, double tau_max) override;
  tr::ValuePair value_pair(const CellField& z, const CellField& z_plus, double tau,
                           double tau_max) override;
  bool has_hessian() const override { return true; }
  CellField hessian_apply(const CellField& z, const CellField& v) override;
  MeshPtr current_mesh() const override { return mesh_; }
  std::size_t dof_count() const override { return static_cast<std::size_t>(space_->dof_count()); }

  const AfemReport& last_report() const { return report_; }
  const SpacePtr& space() const { return space_; }

 private:
  void rebuild(MeshPtr mesh);
  void refine(const Eigen::VectorXd& indicators);

  Options opt_;
  MeshPtr mesh_;
  SpacePtr space_;
  fem::SparseOperator mass_;
  fem::SparseOperator load_;
  Eigen::VectorXd target_load_;
  std::unique_ptr<fem::SpdSolver> solver_;
  std::unique_ptr<fem::DualNorm> dual_;
  AfemReport report_;
};

// ---------------------------------------------------------------------------
// Heat-conduction topology optimization with a Helmholtz filter:
//   min integral q u   s.t.  -div(K(F z) grad u) = q,  0 <= z <= 1, int z = v0 |Omega|.

class TopoOptProblem final : public tr::Oracle {
 public:
  struct Options {
    int example = 1;
    double volume_fraction = 0.4;
    double k_min = 1e-3;
    double k_max = 1.0;
    double source = 1e-2;
    double filter_radius = 1e-2 / (2.0 * 1.7320508075688772);
    std::size_t dof_budget = 30000;
    double theta = 0.05;
    double solve_tol = 1e-10;
  };

  struct Solution {
    FeFunction rho;  ///< filtered density (P1)
    FeFunction u;    ///< temperature (P2)
    double filter_residual = 0.0;
    double state_residual = 0.0;
  };

  TopoOptProblem(Options options, MeshPtr initial);

  const Options& options() const { return opt_; }
  prox::ProxFunction phi() const;
  CellField initial_control() const { return CellField(mesh_, opt_.volume_fraction); }

  /// SIMP conductivity and its derivative; rho is clamped to [0,1].
  double conductivity(double rho) const;
  double conductivity_derivative(double rho) const;

  FeFunction filter_solve(const CellField& z, double* residual = nullptr) const;
  FeFunction state(const FeFunction& rho, double* residual = nullptr) const;
  Solution solve(const CellField& z) const;
  double objective(const FeFunction& u) const;
  double smooth_value(const CellField& z) const { return objective(solve(z).u); }
  /// Riesz gradient through the filter; lambda = -u needs no adjoint solve.
  CellField gradient_field(const Solution& s) const;
  CellField smooth_gradient(const CellField& z) const { return gradient_field(solve(z)); }

  struct Estimate {
    estimate::EstimatorBreakdown filter;
    estimate::EstimatorBreakdown state;
    double total = 0.0;
    Eigen::VectorXd indicators;
  };
  Estimate estimate(const CellField& z, const Solution& s) const;

  tr::GradientEval gradient(const CellField& z, double tau, double tau_max) override;
  tr::ValuePair value_pair(const CellField& z, const CellField& z_plus, double tau,
                           double tau_max) override;
  MeshPtr current_mesh() const override { return mesh_; }
  std::size_t dof_count() const override { return static_cast<std::size_t>(state_space_->dof_count()); }

  const AfemReport& last_report() const { return report_; }
  const SpacePtr& filter_space() const { return filter_space_; }
  const SpacePtr& state_space() const { return state_space_; }

 private:
  void rebuild(MeshPtr mesh);
  void refine(const Eigen::VectorXd& indicators);

  Options opt_;
  MeshPtr mesh_;
  SpacePtr filter_space_;
  SpacePtr state_space_;
  fem::SparseOperator filter_load_;
  Eigen::VectorXd state_load_;
  std::unique_ptr<fem::SpdSolver> filter_solver_;
  std::unique_ptr<fem::DualNorm> filter_dual_;
  std::unique_ptr<fem::DualNorm> state_dual_;
  AfemReport report_;
};

// ---------------------------------------------------------------------------
// f(z) = 1/2 <z, A z> - <c, z> on the two cells of the unit square, with
// optional value noise scaled to the requested tolerance.

class SyntheticQuadratic final : public tr::Oracle {
 public:
  struct Options {
    Eigen::Matrix2d a = (Eigen::Matrix2d() << 3.0, 1.0, 1.0, 2.0).finished();
    Eigen::Vector2d c = Eigen::Vector2d(1.0, -2.0);
    double noise = 0.0;  ///< noise amplitude as a fraction of tau_val
    std::uint64_t seed = 1;
  };

  explicit SyntheticQuadratic(Options options);

  double exact_value(const CellField& z) const;
  Eigen::Vector2d minimizer() const { return opt_.a.ldlt().solve(opt_.c); }

  tr::GradientEval gradient(const CellField& z, double tau, double tau_max) override;
  tr::ValuePair value_pair(const CellField& z, const CellField& z_plus, double tau,
                           double tau_max) override;
  bool has_hessian() const override { return true; }
  CellField hessian_apply(const CellField& z, const CellField& v) override;
  MeshPtr current_mesh() const override { return mesh_; }
  std::size_t dof_count() const override { return 2; }

 private:
  Options opt_;
  MeshPtr mesh_;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Uniform-refinement study for -Laplace u = 2 pi^2 u, u = sin(pi x) sin(pi y)
// on the unit square.

struct RateRow {
  int level = 0;
  int dofs = 0;
  double h = 0.0;
  double error = 0.0;      ///< |u - u_h|_{H1}
  double estimator = 0.0;  ///< energy estimator total
};

/// Levels start from an n0 x n0 grid; each level halves h.
std::vector<RateRow> manufactured_study(int degree, int levels, int n0 = 2);

/// log2 ratio of consecutive entries; empty for fewer than two rows.
std::vector<double> observed_rates(const std::vector<double>& values);

}  // namespace afemtr::problems
