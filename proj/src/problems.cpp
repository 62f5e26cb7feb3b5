#include "afemtr/problems.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace afemtr::problems {

using fem::Bary;
using fem::Vec2;
using mesh::BoundaryTag;

namespace {

using mesh::Mesh;

constexpr double kGeomTol = 1e-12;

// Dual norm of rhs - op x; Dirichlet rows of both sides are zero or identity.
double residual_norm(const fem::SparseOperator& op, const Eigen::VectorXd& rhs, const Eigen::VectorXd& x,
                     const fem::DualNorm& dual) {
  return dual(rhs - op * x);
}

Eigen::VectorXd cell_average(const fem::SparseOperator& load, const Mesh& m, const Eigen::VectorXd& dofs) {
  Eigen::VectorXd out = load.transpose() * dofs;
  return out.cwiseQuotient(m.areas());
}

}  // namespace

MeshPtr lshape_mesh(int n) {
  if (n < 2 || n % 2 != 0) throw Error("lshape_mesh: n must be even and at least 2");
  return mesh::create_rect_mesh(n, n, {}, mesh::QuadSplit::Diagonal,
                                [](Point c) { return !(c.x > 0.5 && c.y > 0.5); });
}

MeshPtr symmetry_half_domain(int example, int n) {
  if (n < 2 || n % 2 != 0) throw Error("symmetry_half_domain: n must be even and at least 2");
  if (example == 1) {
    return mesh::create_rect_mesh(
        n, n, {}, mesh::QuadSplit::CrissCross, [](Point c) { return c.x + c.y <= 1.0; },
        [](Point a, Point b) {
          const bool left = std::abs(a.x) < kGeomTol && std::abs(b.x) < kGeomTol;
          return left ? BoundaryTag::Dirichlet : BoundaryTag::Neumann;
        });
  }
  if (example == 2) {
    if (n < 8) throw Error("symmetry_half_domain: example 2 needs n >= 8 to resolve the heat sink");
    return mesh::create_rect_mesh(n, n / 2, {0.0, 0.0, 1.0, 0.5}, mesh::QuadSplit::CrissCross, {},
                                  [](Point a, Point b) {
                                    const double ym = 0.5 * (a.y + b.y);
                                    const bool sink = std::abs(a.x) < kGeomTol && std::abs(b.x) < kGeomTol &&
                                                      ym >= 0.4 - kGeomTol && ym <= 0.6 + kGeomTol;
                                    return sink ? BoundaryTag::Dirichlet : BoundaryTag::Neumann;
                                  });
  }
  throw Error("symmetry_half_domain: unknown example " + std::to_string(example));
}

// ---------------------------------------------------------------------------

PoissonControlProblem::PoissonControlProblem(Options options, MeshPtr initial) : opt_(std::move(options)) {
  if (!(opt_.alpha > 0.0)) throw Error("PoissonControlProblem: alpha must be positive");
  if (!(opt_.beta >= 0.0)) throw Error("PoissonControlProblem: beta must be nonnegative");
  if (!(opt_.theta > 0.0 && opt_.theta < 1.0)) throw Error("PoissonControlProblem: theta must lie in (0,1)");
  if (!opt_.target) {
    opt_.target = [](Point p) {
      return std::sin(2.0 * std::numbers::pi * p.x) * std::sin(2.0 * std::numbers::pi * p.y);
    };
  }
  rebuild(initial ? std::move(initial) : lshape_mesh());
}

void PoissonControlProblem::rebuild(MeshPtr mesh) {
  mesh_ = std::move(mesh);
  space_ = fem::build_space(mesh_, opt_.degree);
  solver_ = std::make_unique<fem::SpdSolver>(
      fem::eliminate_dirichlet(fem::assemble_diffusion(*space_, 1.0), *space_));
  mass_ = fem::assemble_mass(*space_, 1.0, false);
  load_ = fem::cell_load_operator(*space_);
  const auto& target = opt_.target;
  target_load_ = fem::assemble_load(*space_, [&target](int, const Point& x, const Bary&) { return target(x); });
  dual_ = std::make_unique<fem::DualNorm>(*space_);
}

void PoissonControlProblem::refine(const Eigen::VectorXd& indicators) {
  const auto marked = mesh::dorfler_mark({indicators.data(), static_cast<std::size_t>(indicators.size())},
                                         opt_.theta);
  rebuild(mesh::bisect(mesh_, marked));
}

PoissonControlProblem::State PoissonControlProblem::state(const CellField& z) const {
  if (z.mesh != mesh_) throw Error("PoissonControlProblem::state: control lives on another mesh");
  const Eigen::VectorXd rhs = load_ * z.values;
  auto sol = solver_->solve(rhs, opt_.solve_tol);
  State out{FeFunction(space_, std::move(sol.x)), 0.0};
  out.residual = residual_norm(solver_->op(), rhs, out.u.coeffs, *dual_);
  return out;
}

PoissonControlProblem::State PoissonControlProblem::adjoint(const FeFunction& u) const {
  Eigen::VectorXd rhs = target_load_ - mass_ * u.coeffs;
  fem::zero_dirichlet(*space_, rhs);
  auto sol = solver_->solve(rhs, opt_.solve_tol);
  State out{FeFunction(space_, std::move(sol.x)), 0.0};
  out.residual = residual_norm(solver_->op(), rhs, out.u.coeffs, *dual_);
  if (opt_.flip_adjoint) out.u.coeffs = -out.u.coeffs;
  return out;
}

CellField PoissonControlProblem::gradient_field(const CellField& z, const FeFunction& lambda) const {
  Eigen::VectorXd g = -cell_average(load_, *mesh_, lambda.coeffs) + opt_.alpha * z.values;
  return {mesh_, std::move(g)};
}

double PoissonControlProblem::objective(const CellField& z, const FeFunction& u) const {
  double misfit = 0.0;
  for (std::size_t c = 0; c < mesh_->cell_count(); ++c) {
    const int ci = static_cast<int>(c);
    double local = 0.0;
    for (const auto& q : fem::triangle_rule(5)) {
      const double d = u.value(ci, q.bary) - opt_.target(space_->point(ci, q.bary));
      local += q.weight * d * d;
    }
    misfit += local * mesh_->area(ci);
  }
  return 0.5 * misfit + 0.5 * opt_.alpha * z.dot(z);
}

CellField PoissonControlProblem::smooth_gradient(const CellField& z) const {
  const State s = state(z);
  return gradient_field(z, adjoint(s.u).u);
}

estimate::EstimatorBreakdown PoissonControlProblem::state_estimator(const CellField& z,
                                                                    const FeFunction& u) const {
  const Eigen::VectorXd& zv = z.values;
  return estimate::energy_estimator(
      u, estimate::EllipticData::constant(1.0, 0.0, [&zv](int c, const Point&, const Bary&) { return zv[c]; }));
}

estimate::EstimatorBreakdown PoissonControlProblem::adjoint_estimator(const FeFunction& u,
                                                                      const FeFunction& lambda) const {
  const auto& target = opt_.target;
  return estimate::energy_estimator(
      lambda, estimate::EllipticData::constant(1.0, 0.0, [&u, &target](int c, const Point& x, const Bary& b) {
        return target(x) - u.value(c, b);
      }));
}

tr::GradientEval PoissonControlProblem::gradient(const CellField& z_in, double tau, double tau_max) {
  const double tol = std::min(tau, tau_max);
  CellField z = transfer(z_in);
  report_ = {};
  for (;;) {
    const State s = state(z);
    const State a = adjoint(s.u);
    const auto es = state_estimator(z, s.u);
    const auto ea = adjoint_estimator(s.u, a.u);
    ++report_.passes;
    report_.estimate = es.total + ea.total;
    report_.dofs = dof_count();
    bool done = report_.estimate <= tol;
    if (!done && dof_count() >= opt_.dof_budget) {
      report_.capped = true;
      done = true;
    }
    if (done) {
      return {gradient_field(z, a.u), report_.estimate + s.residual + a.residual, report_.capped};
    }
    refine(estimate::combined_indicator(es, &ea));
    z = transfer(z);
  }
}

tr::ValuePair PoissonControlProblem::value_pair(const CellField& z_in, const CellField& zp_in, double tau,
                                                double tau_max) {
  const double tol = std::min(tau, tau_max);
  CellField z = transfer(z_in), zp = transfer(zp_in);
  report_ = {};
  for (;;) {
    const State s = state(z), sp = state(zp);
    const auto e = state_estimator(z, s.u), ep = state_estimator(zp, sp.u);
    ++report_.passes;
    report_.estimate = std::max(e.total, ep.total);
    report_.dofs = dof_count();
    bool done = e.total <= tol && ep.total <= tol;
    if (!done && dof_count() >= opt_.dof_budget) {
      report_.capped = true;
      done = true;
    }
    if (done) return {objective(z, s.u), objective(zp, sp.u), report_.capped};
    refine(estimate::combined_indicator(e, &ep));
    z = transfer(z);
    zp = transfer(zp);
  }
}

CellField PoissonControlProblem::hessian_apply(const CellField& z, const CellField& v_in) {
  (void)z;
  const CellField v = transfer(v_in);
  const Eigen::VectorXd uv = solver_->solve(load_ * v.values, opt_.solve_tol).x;
  Eigen::VectorXd rhs = -(mass_ * uv);
  fem::zero_dirichlet(*space_, rhs);
  const Eigen::VectorXd lv = solver_->solve(rhs, opt_.solve_tol).x;
  return {mesh_, Eigen::VectorXd(-cell_average(load_, *mesh_, lv) + opt_.alpha * v.values)};
}

// ---------------------------------------------------------------------------

TopoOptProblem::TopoOptProblem(Options options, MeshPtr initial) : opt_(options) {
  if (!(opt_.k_min > 0.0 && opt_.k_min < opt_.k_max)) throw Error("TopoOptProblem: need 0 < k_min < k_max");
  if (!(opt_.filter_radius > 0.0)) throw Error("TopoOptProblem: filter radius must be positive");
  if (!(opt_.volume_fraction > 0.0 && opt_.volume_fraction < 1.0))
    throw Error("TopoOptProblem: volume fraction must lie in (0,1)");
  if (!(opt_.theta > 0.0 && opt_.theta < 1.0)) throw Error("TopoOptProblem: theta must lie in (0,1)");
  rebuild(initial ? std::move(initial) : symmetry_half_domain(opt_.example, 16));
}

prox::ProxFunction TopoOptProblem::phi() const {
  return prox::BoxVolume{0.0, 1.0, opt_.volume_fraction * mesh_->total_area()};
}

void TopoOptProblem::rebuild(MeshPtr mesh) {
  mesh_ = std::move(mesh);
  filter_space_ = fem::build_space(mesh_, 1, {});
  state_space_ = fem::build_space(mesh_, 2, {BoundaryTag::Dirichlet});
  filter_solver_ = std::make_unique<fem::SpdSolver>(fem::SparseOperator(
      opt_.filter_radius * fem::assemble_diffusion(*filter_space_, 1.0) + fem::assemble_mass(*filter_space_, 1.0, true)));
  filter_load_ = fem::cell_load_operator(*filter_space_);
  const double q = opt_.source;
  state_load_ = fem::assemble_load(*state_space_, [q](int, const Point&, const Bary&) { return q; });
  filter_dual_ = std::make_unique<fem::DualNorm>(*filter_space_);
  state_dual_ = std::make_unique<fem::DualNorm>(*state_space_);
}

void TopoOptProblem::refine(const Eigen::VectorXd& indicators) {
  const auto marked = mesh::dorfler_mark({indicators.data(), static_cast<std::size_t>(indicators.size())},
                                         opt_.theta);
  rebuild(mesh::bisect(mesh_, marked));
}

double TopoOptProblem::conductivity(double rho) const {
  const double r = std::clamp(rho, 0.0, 1.0);
  return opt_.k_min + (opt_.k_max - opt_.k_min) * r * r * r;
}

double TopoOptProblem::conductivity_derivative(double rho) const {
  if (rho < 0.0 || rho > 1.0) return 0.0;
  return 3.0 * (opt_.k_max - opt_.k_min) * rho * rho;
}

FeFunction TopoOptProblem::filter_solve(const CellField& z, double* residual) const {
  if (z.mesh != mesh_) throw Error("TopoOptProblem::filter_solve: control lives on another mesh");
  const Eigen::VectorXd rhs = filter_load_ * z.values;
  auto sol = filter_solver_->solve(rhs, opt_.solve_tol);
  if (residual) *residual = residual_norm(filter_solver_->op(), rhs, sol.x, *filter_dual_);
  return {filter_space_, std::move(sol.x)};
}

FeFunction TopoOptProblem::state(const FeFunction& rho, double* residual) const {
  const fem::SparseOperator k = fem::eliminate_dirichlet(
      fem::assemble_diffusion(*state_space_, [this, &rho](int c, const Bary& b) { return conductivity(rho.value(c, b)); }),
      *state_space_);
  const fem::SpdSolver solver(k);
  auto sol = solver.solve(state_load_, opt_.solve_tol);
  if (residual) *residual = residual_norm(solver.op(), state_load_, sol.x, *state_dual_);
  return {state_space_, std::move(sol.x)};
}

TopoOptProblem::Solution TopoOptProblem::solve(const CellField& z) const {
  Solution s;
  s.rho = filter_solve(z, &s.filter_residual);
  s.u = state(s.rho, &s.state_residual);
  return s;
}

double TopoOptProblem::objective(const FeFunction& u) const { return state_load_.dot(u.coeffs); }

CellField TopoOptProblem::gradient_field(const Solution& s) const {
  const auto& m = *mesh_;
  Eigen::VectorXd omega = Eigen::VectorXd::Zero(filter_space_->dof_count());
  std::array<double, 3> phi{};
  for (std::size_t c = 0; c < m.cell_count(); ++c) {
    const int ci = static_cast<int>(c);
    const auto dofs = filter_space_->cell_dofs(ci);
    for (const auto& q : fem::triangle_rule(5)) {
      filter_space_->basis_values(q.bary, phi);
      const Vec2 grad = s.u.gradient(ci, q.bary);
      const double w = -q.weight * m.area(ci) * conductivity_derivative(s.rho.value(ci, q.bary)) * grad.squaredNorm();
      for (int i = 0; i < 3; ++i) omega[dofs[i]] += w * phi[i];
    }
  }
  const Eigen::VectorXd pulled = filter_solver_->solve(omega, opt_.solve_tol).x;
  return {mesh_, cell_average(filter_load_, m, pulled)};
}

TopoOptProblem::Estimate TopoOptProblem::estimate(const CellField& z, const Solution& s) const {
  const Eigen::VectorXd& zv = z.values;
  estimate::EllipticData filter_data =
      estimate::EllipticData::constant(opt_.filter_radius, 1.0, [&zv](int c, const Point&, const Bary&) { return zv[c]; });

  estimate::EllipticData state_data;
  const FeFunction& rho = s.rho;
  state_data.coeff = [this, &rho](int c, const Bary& b) { return conductivity(rho.value(c, b)); };
  state_data.coeff_gradient = [this, &rho](int c, const Bary& b) -> Vec2 {
    return conductivity_derivative(rho.value(c, b)) * rho.gradient(c, b);
  };
  const double q = opt_.source;
  state_data.source = [q](int, const Point&, const Bary&) { return q; };

  Estimate out;
  out.filter = estimate::linf_estimator(s.rho, filter_data);
  out.state = estimate::energy_estimator(s.u, state_data);
  out.total = out.filter.total + out.state.total;
  out.indicators = estimate::combined_indicator(out.filter, &out.state);
  return out;
}

tr::GradientEval TopoOptProblem::gradient(const CellField& z_in, double tau, double tau_max) {
  const double tol = std::min(tau, tau_max);
  CellField z = transfer(z_in);
  report_ = {};
  for (;;) {
    const Solution s = solve(z);
    const Estimate e = estimate(z, s);
    ++report_.passes;
    report_.estimate = e.total;
    report_.dofs = dof_count();
    bool done = e.total <= tol;
    if (!done && dof_count() >= opt_.dof_budget) {
      report_.capped = true;
      done = true;
    }
    if (done) {
      // The adjoint is -u, so its residual equals the state residual.
      const double xi = e.total + s.filter_residual + 2.0 * s.state_residual;
      return {gradient_field(s), xi, report_.capped};
    }
    refine(e.indicators);
    z = transfer(z);
  }
}

tr::ValuePair TopoOptProblem::value_pair(const CellField& z_in, const CellField& zp_in, double tau,
                                         double tau_max) {
  const double tol = std::min(tau, tau_max);
  CellField z = transfer(z_in), zp = transfer(zp_in);
  report_ = {};
  for (;;) {
    const Solution s = solve(z), sp = solve(zp);
    const Estimate e = estimate(z, s), ep = estimate(zp, sp);
    ++report_.passes;
    report_.estimate = std::max(e.total, ep.total);
    report_.dofs = dof_count();
    bool done = e.total <= tol && ep.total <= tol;
    if (!done && dof_count() >= opt_.dof_budget) {
      report_.capped = true;
      done = true;
    }
    if (done) return {objective(s.u), objective(sp.u), report_.capped};
    refine(Eigen::VectorXd(e.indicators + ep.indicators));
    z = transfer(z);
    zp = transfer(zp);
  }
}

// ---------------------------------------------------------------------------

SyntheticQuadratic::SyntheticQuadratic(Options options)
    : opt_(std::move(options)), mesh_(mesh::create_rect_mesh(1, 1)), rng_(opt_.seed) {
  if (opt_.a(0, 1) != opt_.a(1, 0) || opt_.a.ldlt().info() != Eigen::Success || !opt_.a.ldlt().isPositive())
    throw Error("SyntheticQuadratic: A must be symmetric positive definite");
}

double SyntheticQuadratic::exact_value(const CellField& z) const {
  const Eigen::Vector2d v = z.values;
  const CellField az(mesh_, Eigen::VectorXd(opt_.a * v));
  const CellField c(mesh_, Eigen::VectorXd(opt_.c));
  return 0.5 * z.dot(az) - c.dot(z);
}

tr::GradientEval SyntheticQuadratic::gradient(const CellField& z, double, double) {
  const Eigen::Vector2d v = z.values;
  return {CellField(mesh_, Eigen::VectorXd(opt_.a * v - opt_.c)), 0.0, false};
}

tr::ValuePair SyntheticQuadratic::value_pair(const CellField& z, const CellField& z_plus, double tau,
                                             double tau_max) {
  const double amp = opt_.noise * std::min(tau, tau_max);
  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  const double e0 = amp > 0.0 ? amp * noise(rng_) : 0.0;
  const double e1 = amp > 0.0 ? amp * noise(rng_) : 0.0;
  return {exact_value(z) + e0, exact_value(z_plus) + e1, false};
}

CellField SyntheticQuadratic::hessian_apply(const CellField&, const CellField& v) {
  const Eigen::Vector2d x = v.values;
  return {mesh_, Eigen::VectorXd(opt_.a * x)};
}

// ---------------------------------------------------------------------------

std::vector<RateRow> manufactured_study(int degree, int levels, int n0) {
  using std::numbers::pi;
  if (levels < 1) throw Error("manufactured_study: need at least one level");
  auto exact_grad = [](const Point& p) {
    return Vec2(pi * std::cos(pi * p.x) * std::sin(pi * p.y), pi * std::sin(pi * p.x) * std::cos(pi * p.y));
  };
  MeshPtr m = mesh::create_rect_mesh(n0, n0);
  std::vector<RateRow> rows;
  for (int level = 0; level < levels; ++level) {
    if (level > 0) m = mesh::bisect_all(mesh::bisect_all(m));
    const SpacePtr space = fem::build_space(m, degree);
    const fem::SourceFunction f = [](int, const Point& x, const Bary&) {
      return 2.0 * pi * pi * std::sin(pi * x.x) * std::sin(pi * x.y);
    };
    const auto k = fem::eliminate_dirichlet(fem::assemble_diffusion(*space, 1.0), *space);
    const FeFunction uh(space, fem::solve_spd(k, fem::assemble_load(*space, f), 1e-12).x);

    double err2 = 0.0;
    for (std::size_t c = 0; c < m->cell_count(); ++c) {
      const int ci = static_cast<int>(c);
      for (const auto& q : fem::triangle_rule(5))
        err2 += q.weight * m->area(ci) * (exact_grad(space->point(ci, q.bary)) - uh.gradient(ci, q.bary)).squaredNorm();
    }
    const auto est = estimate::energy_estimator(uh, estimate::EllipticData::constant(1.0, 0.0, f));
    rows.push_back({level, space->dof_count(), mesh::mesh_stats(*m).h_max, std::sqrt(err2), est.total});
  }
  return rows;
}

std::vector<double> observed_rates(const std::vector<double>& values) {
  std::vector<double> out;
  for (std::size_t i = 1; i < values.size(); ++i) out.push_back(std::log2(values[i - 1] / values[i]));
  return out;
}

}  // namespace afemtr::problems
