#include "afemtr/fem.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>

namespace afemtr::fem {

using mesh::BoundaryTag;
using mesh::Point;

std::span<const QuadPoint> triangle_rule(int order) {
  static const std::array<QuadPoint, 3> order2 = {{
      {{2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0}, 1.0 / 3.0},
      {{1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0}, 1.0 / 3.0},
      {{1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0}, 1.0 / 3.0},
  }};
  static const std::array<QuadPoint, 7> order5 = [] {
    const double r = std::sqrt(15.0);
    const double a1 = (6.0 - r) / 21.0, b1 = (9.0 + 2.0 * r) / 21.0, w1 = (155.0 - r) / 1200.0;
    const double a2 = (6.0 + r) / 21.0, b2 = (9.0 - 2.0 * r) / 21.0, w2 = (155.0 + r) / 1200.0;
    return std::array<QuadPoint, 7>{{
        {{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, 9.0 / 40.0},
        {{b1, a1, a1}, w1},
        {{a1, b1, a1}, w1},
        {{a1, a1, b1}, w1},
        {{b2, a2, a2}, w2},
        {{a2, b2, a2}, w2},
        {{a2, a2, b2}, w2},
    }};
  }();
  if (order <= 2) return order2;
  if (order <= 5) return order5;
  throw Error("triangle_rule: no rule of order " + std::to_string(order));
}

std::span<const EdgePoint> edge_rule() {
  static const std::array<EdgePoint, 3> rule = [] {
    const double d = 0.5 * std::sqrt(0.6);
    return std::array<EdgePoint, 3>{{{0.5 - d, 5.0 / 18.0}, {0.5, 8.0 / 18.0}, {0.5 + d, 5.0 / 18.0}}};
  }();
  return rule;
}

FeSpace::FeSpace(MeshPtr mesh, int degree, std::vector<BoundaryTag> dirichlet_tags)
    : mesh_(std::move(mesh)), degree_(degree), tags_(std::move(dirichlet_tags)) {
  if (degree_ != 1 && degree_ != 2)
    throw Error("FeSpace: unsupported polynomial degree " + std::to_string(degree_));
  const auto& m = *mesh_;
  const int nv = static_cast<int>(m.vertex_count());
  dof_count_ = degree_ == 1 ? nv : nv + static_cast<int>(m.edge_count());
  dofs_.resize(m.cell_count() * static_cast<std::size_t>(local_size()));
  for (std::size_t c = 0; c < m.cell_count(); ++c) {
    int* d = dofs_.data() + c * static_cast<std::size_t>(local_size());
    const auto& t = m.cell(static_cast<int>(c));
    d[0] = t[0];
    d[1] = t[1];
    d[2] = t[2];
    if (degree_ == 2) {
      const auto& e = m.cell_edges(static_cast<int>(c));
      d[3] = nv + e[0];
      d[4] = nv + e[1];
      d[5] = nv + e[2];
    }
  }
  dirichlet_.assign(static_cast<std::size_t>(dof_count_), 0);
  for (std::size_t e = 0; e < m.edge_count(); ++e) {
    const auto& edge = m.edge(static_cast<int>(e));
    if (!edge.on_boundary() || !is_dirichlet_tag(edge.tag)) continue;
    dirichlet_[edge.vertices[0]] = 1;
    dirichlet_[edge.vertices[1]] = 1;
    if (degree_ == 2) dirichlet_[nv + e] = 1;
  }
}

bool FeSpace::is_dirichlet_tag(BoundaryTag tag) const {
  return std::find(tags_.begin(), tags_.end(), tag) != tags_.end();
}

std::vector<Point> FeSpace::dof_points() const {
  const auto& m = *mesh_;
  std::vector<Point> pts = m.vertices();
  if (degree_ == 2)
    for (const auto& e : m.edges()) pts.push_back(0.5 * (m.vertex(e.vertices[0]) + m.vertex(e.vertices[1])));
  return pts;
}

std::array<Vec2, 3> FeSpace::barycentric_gradients(int cell) const {
  const auto& m = *mesh_;
  const auto& t = m.cell(cell);
  const double two_area = 2.0 * m.area(cell);
  std::array<Vec2, 3> g;
  for (int k = 0; k < 3; ++k) {
    const Point a = m.vertex(t[(k + 1) % 3]);
    const Point b = m.vertex(t[(k + 2) % 3]);
    // Inward normal of the opposite edge scaled by its length.
    g[k] = Vec2(a.y - b.y, b.x - a.x) / two_area;
  }
  return g;
}

Point FeSpace::point(int cell, const Bary& b) const {
  const auto& m = *mesh_;
  const auto& t = m.cell(cell);
  return b[0] * m.vertex(t[0]) + b[1] * m.vertex(t[1]) + b[2] * m.vertex(t[2]);
}

void FeSpace::basis_values(const Bary& b, std::span<double> out) const {
  if (degree_ == 1) {
    out[0] = b[0];
    out[1] = b[1];
    out[2] = b[2];
    return;
  }
  for (int k = 0; k < 3; ++k) {
    out[k] = b[k] * (2.0 * b[k] - 1.0);
    out[3 + k] = 4.0 * b[(k + 1) % 3] * b[(k + 2) % 3];
  }
}

void FeSpace::basis_gradients(const std::array<Vec2, 3>& dl, const Bary& b,
                              std::span<Vec2> out) const {
  if (degree_ == 1) {
    out[0] = dl[0];
    out[1] = dl[1];
    out[2] = dl[2];
    return;
  }
  for (int k = 0; k < 3; ++k) {
    const int p = (k + 1) % 3, q = (k + 2) % 3;
    out[k] = (4.0 * b[k] - 1.0) * dl[k];
    out[3 + k] = 4.0 * (b[p] * dl[q] + b[q] * dl[p]);
  }
}

void FeSpace::basis_laplacians(const std::array<Vec2, 3>& dl, std::span<double> out) const {
  if (degree_ == 1) {
    std::fill(out.begin(), out.begin() + 3, 0.0);
    return;
  }
  for (int k = 0; k < 3; ++k) {
    const int p = (k + 1) % 3, q = (k + 2) % 3;
    out[k] = 4.0 * dl[k].squaredNorm();
    out[3 + k] = 8.0 * dl[p].dot(dl[q]);
  }
}

SpacePtr build_space(MeshPtr mesh, int degree, std::vector<BoundaryTag> dirichlet_tags) {
  return std::make_shared<const FeSpace>(std::move(mesh), degree, std::move(dirichlet_tags));
}

FeFunction::FeFunction(SpacePtr s)
    : space(std::move(s)), coeffs(Eigen::VectorXd::Zero(space->dof_count())) {}

FeFunction::FeFunction(SpacePtr s, Eigen::VectorXd c) : space(std::move(s)), coeffs(std::move(c)) {
  if (coeffs.size() != space->dof_count())
    throw Error("FeFunction: coefficient count does not match the space");
}

double FeFunction::value(int cell, const Bary& b) const {
  std::array<double, 6> phi{};
  space->basis_values(b, phi);
  const auto dofs = space->cell_dofs(cell);
  double v = 0.0;
  for (std::size_t i = 0; i < dofs.size(); ++i) v += coeffs[dofs[i]] * phi[i];
  return v;
}

Vec2 FeFunction::gradient(int cell, const Bary& b) const {
  std::array<Vec2, 6> dphi;
  space->basis_gradients(space->barycentric_gradients(cell), b, dphi);
  const auto dofs = space->cell_dofs(cell);
  Vec2 g = Vec2::Zero();
  for (std::size_t i = 0; i < dofs.size(); ++i) g += coeffs[dofs[i]] * dphi[i];
  return g;
}

double FeFunction::laplacian(int cell) const {
  std::array<double, 6> lap{};
  space->basis_laplacians(space->barycentric_gradients(cell), lap);
  const auto dofs = space->cell_dofs(cell);
  double v = 0.0;
  for (std::size_t i = 0; i < dofs.size(); ++i) v += coeffs[dofs[i]] * lap[i];
  return v;
}

FeFunction interpolate(const SpacePtr& space, const std::function<double(Point)>& f) {
  const auto pts = space->dof_points();
  Eigen::VectorXd c(space->dof_count());
  for (int i = 0; i < space->dof_count(); ++i) c[i] = f(pts[i]);
  return {space, std::move(c)};
}

std::vector<std::vector<Vec2>> cell_gradients(const FeFunction& u) {
  const auto& space = *u.space;
  const auto n = space.mesh().cell_count();
  std::vector<std::vector<Vec2>> out(n);
  for (std::size_t c = 0; c < n; ++c) {
    const int ci = static_cast<int>(c);
    if (space.degree() == 1) {
      out[c].push_back(u.gradient(ci, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}));
    } else {
      for (const auto& q : triangle_rule(5)) out[c].push_back(u.gradient(ci, q.bary));
    }
  }
  return out;
}

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

SparseOperator from_triplets(int n, int m, const Triplets& t) {
  SparseOperator op(n, m);
  op.setFromTriplets(t.begin(), t.end());
  op.makeCompressed();
  return op;
}

int rule_order(const FeSpace& space) { return space.degree() == 1 ? 2 : 5; }

}  // namespace

SparseOperator assemble_diffusion(const FeSpace& space, double coeff) {
  if (!(coeff > 0.0)) throw Error("assemble_diffusion: coefficient must be positive");
  return assemble_diffusion(space, [coeff](int, const Bary&) { return coeff; });
}

SparseOperator assemble_diffusion(const FeSpace& space, const Eigen::VectorXd& cell_coeff) {
  if (static_cast<std::size_t>(cell_coeff.size()) != space.mesh().cell_count())
    throw Error("assemble_diffusion: coefficient length does not match cell count");
  return assemble_diffusion(space, [&cell_coeff](int c, const Bary&) { return cell_coeff[c]; });
}

SparseOperator assemble_diffusion(const FeSpace& space, const CellCoefficient& coeff) {
  const auto& m = space.mesh();
  const int ls = space.local_size();
  Triplets trip;
  trip.reserve(m.cell_count() * static_cast<std::size_t>(ls * ls));
  std::array<Vec2, 6> dphi;
  Eigen::Matrix<double, 6, 6> local;
  for (std::size_t c = 0; c < m.cell_count(); ++c) {
    const int ci = static_cast<int>(c);
    const auto dl = space.barycentric_gradients(ci);
    const double area = m.area(ci);
    local.setZero();
    for (const auto& q : triangle_rule(rule_order(space))) {
      const double k = coeff(ci, q.bary);
      if (!(k > 0.0)) throw Error("assemble_diffusion: coefficient must be positive");
      space.basis_gradients(dl, q.bary, dphi);
      const double w = q.weight * area * k;
      for (int i = 0; i < ls; ++i)
        for (int j = 0; j < ls; ++j) local(i, j) += w * dphi[i].dot(dphi[j]);
    }
    const auto dofs = space.cell_dofs(ci);
    for (int i = 0; i < ls; ++i)
      for (int j = 0; j < ls; ++j) trip.emplace_back(dofs[i], dofs[j], local(i, j));
  }
  return from_triplets(space.dof_count(), space.dof_count(), trip);
}

SparseOperator assemble_mass(const FeSpace& space, double coeff, bool lumped) {
  return assemble_mass(
      space, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(space.mesh().cell_count()), coeff),
      lumped);
}

SparseOperator assemble_mass(const FeSpace& space, const Eigen::VectorXd& cell_coeff, bool lumped) {
  const auto& m = space.mesh();
  if (static_cast<std::size_t>(cell_coeff.size()) != m.cell_count())
    throw Error("assemble_mass: coefficient length does not match cell count");
  const int ls = space.local_size();
  Triplets trip;
  std::array<double, 6> phi{};
  Eigen::Matrix<double, 6, 6> local;
  for (std::size_t c = 0; c < m.cell_count(); ++c) {
    const int ci = static_cast<int>(c);
    if (cell_coeff[ci] < 0.0) throw Error("assemble_mass: coefficient must be nonnegative");
    local.setZero();
    // phi_i phi_j has degree 2*degree; the order-5 rule covers P2.
    for (const auto& q : triangle_rule(space.degree() == 1 ? 2 : 5)) {
      space.basis_values(q.bary, phi);
      const double w = q.weight * m.area(ci) * cell_coeff[ci];
      for (int i = 0; i < ls; ++i)
        for (int j = 0; j < ls; ++j) local(i, j) += w * phi[i] * phi[j];
    }
    const auto dofs = space.cell_dofs(ci);
    for (int i = 0; i < ls; ++i) {
      if (lumped) {
        trip.emplace_back(dofs[i], dofs[i], local.row(i).head(ls).sum());
      } else {
        for (int j = 0; j < ls; ++j) trip.emplace_back(dofs[i], dofs[j], local(i, j));
      }
    }
  }
  return from_triplets(space.dof_count(), space.dof_count(), trip);
}

Eigen::VectorXd assemble_load(const FeSpace& space, const mesh::CellField& source) {
  if (source.mesh != space.mesh_ptr()) throw Error("assemble_load: field lives on another mesh");
  Eigen::VectorXd b = cell_load_operator(space) * source.values;
  return b;
}

Eigen::VectorXd assemble_load(const FeSpace& space, const SourceFunction& source) {
  const auto& m = space.mesh();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(space.dof_count());
  std::array<double, 6> phi{};
  for (std::size_t c = 0; c < m.cell_count(); ++c) {
    const int ci = static_cast<int>(c);
    const auto dofs = space.cell_dofs(ci);
    for (const auto& q : triangle_rule(5)) {
      space.basis_values(q.bary, phi);
      const double f = source(ci, space.point(ci, q.bary), q.bary);
      const double w = q.weight * m.area(ci) * f;
      for (std::size_t i = 0; i < dofs.size(); ++i) b[dofs[i]] += w * phi[i];
    }
  }
  zero_dirichlet(space, b);
  return b;
}

SparseOperator cell_load_operator(const FeSpace& space) {
  const auto& m = space.mesh();
  Triplets trip;
  // Integrals of the basis functions: |T|/3 (P1); 0 and |T|/3 (P2 vertex, edge).
  for (std::size_t c = 0; c < m.cell_count(); ++c) {
    const int ci = static_cast<int>(c);
    const auto dofs = space.cell_dofs(ci);
    const double a = m.area(ci);
    for (int i = 0; i < space.local_size(); ++i) {
      const double w = space.degree() == 1 ? a / 3.0 : (i < 3 ? 0.0 : a / 3.0);
      if (w != 0.0 && !space.is_dirichlet(dofs[i])) trip.emplace_back(dofs[i], ci, w);
    }
  }
  return from_triplets(space.dof_count(), static_cast<int>(m.cell_count()), trip);
}

SparseOperator eliminate_dirichlet(const SparseOperator& op, const FeSpace& space) {
  Triplets trip;
  trip.reserve(static_cast<std::size_t>(op.nonZeros()));
  for (int k = 0; k < op.outerSize(); ++k) {
    for (SparseOperator::InnerIterator it(op, k); it; ++it) {
      const auto r = static_cast<int>(it.row()), c = static_cast<int>(it.col());
      if (space.is_dirichlet(r) || space.is_dirichlet(c)) continue;
      trip.emplace_back(r, c, it.value());
    }
  }
  for (int i = 0; i < space.dof_count(); ++i)
    if (space.is_dirichlet(i)) trip.emplace_back(i, i, 1.0);
  return from_triplets(static_cast<int>(op.rows()), static_cast<int>(op.cols()), trip);
}

void zero_dirichlet(const FeSpace& space, Eigen::VectorXd& v) {
  for (int i = 0; i < space.dof_count(); ++i)
    if (space.is_dirichlet(i)) v[i] = 0.0;
}

struct SpdSolver::Impl {
  Eigen::IncompleteCholesky<double, Eigen::Lower, Eigen::AMDOrdering<int>> ic;
  Eigen::VectorXd inv_diag;
  bool use_ic = true;

  Eigen::VectorXd apply(const Eigen::VectorXd& r) const {
    if (use_ic) return ic.solve(r);
    return inv_diag.cwiseProduct(r);
  }
};

SpdSolver::SpdSolver(SparseOperator op) : op_(std::move(op)), impl_(std::make_unique<Impl>()) {
  if (op_.rows() != op_.cols()) throw Error("SpdSolver: operator is not square");
  impl_->ic.compute(op_);
  impl_->use_ic = impl_->ic.info() == Eigen::Success;
  if (!impl_->use_ic) {
    Eigen::VectorXd d = op_.diagonal();
    impl_->inv_diag = d.unaryExpr([](double v) { return v > 0.0 ? 1.0 / v : 1.0; });
  }
}

SpdSolver::~SpdSolver() = default;
SpdSolver::SpdSolver(SpdSolver&&) noexcept = default;
SpdSolver& SpdSolver::operator=(SpdSolver&&) noexcept = default;

SolveResult SpdSolver::solve(const Eigen::VectorXd& rhs, double rel_tol, const ResidualNorm& norm,
                             int max_iterations) const {
  const auto n = op_.rows();
  if (rhs.size() != n) throw Error("SpdSolver: right-hand side has the wrong length");
  const int cap = max_iterations > 0 ? max_iterations : static_cast<int>(std::max<Eigen::Index>(10 * n, 10));
  auto measure = [&](const Eigen::VectorXd& v) { return norm ? norm(v) : v.norm(); };

  SolveResult out;
  out.x = Eigen::VectorXd::Zero(n);
  out.rhs_norm = measure(rhs);
  const double b2 = rhs.norm();
  if (b2 == 0.0) return out;
  const double goal = rel_tol * out.rhs_norm;

  Eigen::VectorXd r = rhs;
  double l2_tol = rel_tol * b2;
  int total = 0;
  // Euclidean CG sweeps; when another norm is requested, tighten the sweep
  // tolerance until that norm meets the goal as well.
  for (int sweep = 0; sweep < 8; ++sweep) {
    Eigen::VectorXd z = impl_->apply(r);
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    while (r.norm() > l2_tol) {
      if (total >= cap)
        throw Error("SpdSolver: iteration cap of " + std::to_string(cap) +
                    " reached; the operator is ill-conditioned or not SPD");
      const Eigen::VectorXd ap = op_ * p;
      const double pap = p.dot(ap);
      if (!(pap > 0.0)) throw Error("SpdSolver: operator is not positive definite");
      const double alpha = rz / pap;
      out.x += alpha * p;
      r -= alpha * ap;
      z = impl_->apply(r);
      const double rz_next = r.dot(z);
      p = z + (rz_next / rz) * p;
      rz = rz_next;
      ++total;
    }
    // Recompute the true residual to shed accumulated drift.
    r = rhs - op_ * out.x;
    out.residual_norm = measure(r);
    if (out.residual_norm <= goal) break;
    l2_tol = std::max(0.1 * std::min(l2_tol, r.norm()), 1e-300);
  }
  out.iterations = total;
  return out;
}

SolveResult solve_spd(const SparseOperator& op, const Eigen::VectorXd& rhs, double rel_tol,
                      const ResidualNorm& norm) {
  return SpdSolver(op).solve(rhs, rel_tol, norm);
}

DualNorm::DualNorm(const FeSpace& space, double rel_tol)
    : dirichlet_(space.dirichlet_mask()),
      solver_(eliminate_dirichlet(
          SparseOperator(assemble_diffusion(space, 1.0) + assemble_mass(space, 1.0, false)), space)),
      rel_tol_(rel_tol) {}

double DualNorm::operator()(Eigen::VectorXd r) const {
  for (Eigen::Index i = 0; i < r.size(); ++i)
    if (dirichlet_[static_cast<std::size_t>(i)]) r[i] = 0.0;
  if (r.squaredNorm() == 0.0) return 0.0;
  const auto y = solver_.solve(r, rel_tol_).x;
  return std::sqrt(std::max(r.dot(y), 0.0));
}

double dual_norm(const FeSpace& space, const Eigen::VectorXd& residual) {
  return DualNorm(space)(residual);
}

}  // namespace afemtr::fem
