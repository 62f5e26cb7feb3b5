#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "afemtr/mesh.hpp"

namespace afemtr::fem {

using mesh::MeshPtr;
using Bary = std::array<double, 3>;
using Vec2 = Eigen::Vector2d;

struct QuadPoint {
  Bary bary;
  double weight;  ///< fraction of the cell area; weights sum to one
};

/// Symmetric triangle rules: order 2 (3 points) or order 5 (7 points).
std::span<const QuadPoint> triangle_rule(int order);

struct EdgePoint {
  double s;       ///< position along the edge in [0, 1]
  double weight;  ///< fraction of the edge length
};

/// Three-point Gauss-Legendre rule on an edge (exact to degree 5).
std::span<const EdgePoint> edge_rule();

/// Continuous Lagrange space of degree 1 or 2 with homogeneous Dirichlet
/// conditions on the boundary edges carrying one of `dirichlet_tags`.
///
/// Dofs are numbered vertices first, then (degree 2) one per edge in mesh
/// edge order. Local dofs per cell: the three vertices, then the midpoints
/// of the edges opposite local vertices 0, 1 and 2.
class FeSpace {
 public:
  FeSpace(MeshPtr mesh, int degree, std::vector<mesh::BoundaryTag> dirichlet_tags);

  const mesh::Mesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }
  int degree() const { return degree_; }
  int local_size() const { return degree_ == 1 ? 3 : 6; }
  int dof_count() const { return dof_count_; }
  std::span<const int> cell_dofs(int cell) const {
    return {dofs_.data() + static_cast<std::size_t>(cell) * local_size(),
            static_cast<std::size_t>(local_size())};
  }
  const std::vector<char>& dirichlet_mask() const { return dirichlet_; }
  bool is_dirichlet(int dof) const { return dirichlet_[dof] != 0; }
  const std::vector<mesh::BoundaryTag>& dirichlet_tags() const { return tags_; }
  bool is_dirichlet_tag(mesh::BoundaryTag tag) const;

  /// Physical coordinates of each dof (vertex or edge midpoint).
  std::vector<mesh::Point> dof_points() const;

  /// Constant gradients of the barycentric coordinates on a cell.
  std::array<Vec2, 3> barycentric_gradients(int cell) const;
  mesh::Point point(int cell, const Bary& b) const;
  void basis_values(const Bary& b, std::span<double> out) const;
  void basis_gradients(const std::array<Vec2, 3>& dlambda, const Bary& b,
                       std::span<Vec2> out) const;
  /// Constant Laplacians of the basis functions on a cell (zero for P1).
  void basis_laplacians(const std::array<Vec2, 3>& dlambda, std::span<double> out) const;

 private:
  MeshPtr mesh_;
  int degree_;
  int dof_count_ = 0;
  std::vector<int> dofs_;
  std::vector<char> dirichlet_;
  std::vector<mesh::BoundaryTag> tags_;
};

using SpacePtr = std::shared_ptr<const FeSpace>;

SpacePtr build_space(MeshPtr mesh, int degree,
                     std::vector<mesh::BoundaryTag> dirichlet_tags = {mesh::BoundaryTag::Dirichlet});

struct FeFunction {
  SpacePtr space;
  Eigen::VectorXd coeffs;

  FeFunction() = default;
  explicit FeFunction(SpacePtr s);
  FeFunction(SpacePtr s, Eigen::VectorXd c);

  double value(int cell, const Bary& b) const;
  Vec2 gradient(int cell, const Bary& b) const;
  /// Laplacian on a cell (constant for degree <= 2).
  double laplacian(int cell) const;
};

/// Nodal interpolant of a function.
FeFunction interpolate(const SpacePtr& space, const std::function<double(mesh::Point)>& f);

/// Exact gradients: one per cell for P1, one per point of the order-5 rule for P2.
std::vector<std::vector<Vec2>> cell_gradients(const FeFunction& u);

/// Symmetric sparse matrix (column storage of a symmetric matrix is also its
/// row storage).
using SparseOperator = Eigen::SparseMatrix<double>;

using CellCoefficient = std::function<double(int cell, const Bary& b)>;
using SourceFunction = std::function<double(int cell, const mesh::Point& x, const Bary& b)>;

SparseOperator assemble_diffusion(const FeSpace& space, double coeff);
SparseOperator assemble_diffusion(const FeSpace& space, const Eigen::VectorXd& cell_coeff);
SparseOperator assemble_diffusion(const FeSpace& space, const CellCoefficient& coeff);

SparseOperator assemble_mass(const FeSpace& space, double coeff, bool lumped);
SparseOperator assemble_mass(const FeSpace& space, const Eigen::VectorXd& cell_coeff, bool lumped);

/// Load vector b_i = integral of source * phi_i; Dirichlet rows are zero.
Eigen::VectorXd assemble_load(const FeSpace& space, const mesh::CellField& source);
Eigen::VectorXd assemble_load(const FeSpace& space, const SourceFunction& source);

/// Matrix with entries integral over cell T of phi_i (dofs x cells);
/// Dirichlet rows are zero. Maps a piecewise-constant field to its load.
SparseOperator cell_load_operator(const FeSpace& space);

/// Zeroes Dirichlet rows and columns and puts 1 on their diagonal.
SparseOperator eliminate_dirichlet(const SparseOperator& op, const FeSpace& space);
void zero_dirichlet(const FeSpace& space, Eigen::VectorXd& v);

struct SolveResult {
  Eigen::VectorXd x;
  double residual_norm = 0.0;  ///< in the norm used by the stopping test
  double rhs_norm = 0.0;
  int iterations = 0;
};

using ResidualNorm = std::function<double(const Eigen::VectorXd&)>;

/// Preconditioned conjugate gradients with an incomplete-Cholesky
/// preconditioner built once per operator.
class SpdSolver {
 public:
  explicit SpdSolver(SparseOperator op);
  ~SpdSolver();
  SpdSolver(SpdSolver&&) noexcept;
  SpdSolver& operator=(SpdSolver&&) noexcept;

  const SparseOperator& op() const { return op_; }

  /// Stops once norm(rhs - op x) <= rel_tol * norm(rhs); the Euclidean norm
  /// when `norm` is empty. Throws when the iteration cap (10 x dofs by
  /// default) is exceeded.
  SolveResult solve(const Eigen::VectorXd& rhs, double rel_tol,
                    const ResidualNorm& norm = {}, int max_iterations = -1) const;

 private:
  struct Impl;
  SparseOperator op_;
  std::unique_ptr<Impl> impl_;
};

SolveResult solve_spd(const SparseOperator& op, const Eigen::VectorXd& rhs, double rel_tol,
                      const ResidualNorm& norm = {});

/// Norm of (V^h)* functionals through the H1 Riesz map: sqrt(r^T R^-1 r) with
/// R = stiffness + mass on the Dirichlet-reduced space.
class DualNorm {
 public:
  explicit DualNorm(const FeSpace& space, double rel_tol = 1e-10);
  double operator()(Eigen::VectorXd r) const;
  const SparseOperator& riesz() const { return solver_.op(); }

 private:
  std::vector<char> dirichlet_;
  SpdSolver solver_;
  double rel_tol_;
};

double dual_norm(const FeSpace& space, const Eigen::VectorXd& residual);

}  // namespace afemtr::fem
