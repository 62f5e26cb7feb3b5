#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "afemtr/problems.hpp"
#include "afemtr/tr_core.hpp"

using namespace afemtr;
using namespace afemtr::tr;
using mesh::Point;

namespace {

// One triangle of unit area.
mesh::MeshPtr unit_area_cell() {
  mesh::BoundaryTagMap tags;
  for (auto [a, b] : {std::pair{0, 1}, {1, 2}, {2, 0}}) tags[mesh::edge_key(a, b)] = mesh::BoundaryTag::Dirichlet;
  return std::make_shared<const mesh::Mesh>(std::vector<Point>{{0, 0}, {2, 0}, {0, 1}},
                                            std::vector<std::array<int, 3>>{{0, 1, 2}}, tags);
}

class ScaledIdentity final : public ModelHessian {
 public:
  explicit ScaledIdentity(double s) : s_(s) {}
  CellField apply(const CellField& v) const override { return s_ * v; }

 private:
  double s_;
};

// Fixed gradient whose estimate halves on every call.
class HalvingOracle final : public Oracle {
 public:
  HalvingOracle(mesh::MeshPtr m, double g, double xi0) : mesh_(std::move(m)), g_(g), xi_(xi0) {}
  GradientEval gradient(const CellField&, double, double) override {
    ++calls;
    GradientEval out{CellField(mesh_, g_), xi_, degrade_after > 0 && calls >= degrade_after};
    xi_ *= 0.5;
    return out;
  }
  ValuePair value_pair(const CellField&, const CellField&, double, double) override { return {}; }
  mesh::MeshPtr current_mesh() const override { return mesh_; }
  std::size_t dof_count() const override { return 1; }

  int calls = 0;
  int degrade_after = 0;

 private:
  mesh::MeshPtr mesh_;
  double g_, xi_;
};

TrParams quiet_params() {
  TrParams p;
  p.kappa_val = 1.0;
  p.kappa_der = 1.0;
  return p;
}

Eigen::Vector2d vec(const CellField& z) { return z.values; }

}  // namespace

TEST_CASE("parameter checks") {
  const TrParams p;
  const auto warnings = p.validate();
  CHECK(warnings.size() == 2);  // gamma2 = 1 and gamma = 1 - 1e-3 are soft violations
  CHECK(p.epsilon(5) == doctest::Approx(1.0 - 1e-3));

  TrParams decay;
  decay.eps_decay = 0.999;
  CHECK(decay.epsilon(3) == doctest::Approx(0.999 * std::pow(0.999, 3)));

  TrParams strict;
  strict.gamma2 = 0.5;
  strict.gamma = 0.01;
  CHECK(strict.validate().empty());

  auto broken = [](auto edit) {
    TrParams q;
    edit(q);
    return q;
  };
  CHECK_THROWS_AS(broken([](TrParams& q) { q.eta1 = 0.95; }).validate(), Error);
  CHECK_THROWS_AS(broken([](TrParams& q) { q.gamma1 = 2.0; }).validate(), Error);
  CHECK_THROWS_AS(broken([](TrParams& q) { q.gamma3 = 0.5; }).validate(), Error);
  CHECK_THROWS_AS(broken([](TrParams& q) { q.j = 1.0; }).validate(), Error);
  CHECK_THROWS_AS(broken([](TrParams& q) { q.theta = 0.0; }).validate(), Error);
  CHECK_THROWS_AS(broken([](TrParams& q) { q.delta0 = -1.0; }).validate(), Error);
}

TEST_CASE("stationarity measure") {
  auto m = mesh::create_rect_mesh(1, 1);
  Eigen::VectorXd gv(2);
  gv << 3.0, -4.0;
  const CellField g(m, gv), z(m, 0.2);
  const double gnorm = std::sqrt(0.5 * 9 + 0.5 * 16);
  for (double t : {0.1, 1.0, 7.0}) CHECK(stationarity(z, g, t, prox::Zero{}) == doctest::Approx(gnorm));
  CHECK(stationarity(CellField(m, 0.4), CellField(m, 0.0), 1.0, prox::BoxVolume{0, 1, 0.4}) == 0.0);

  // Soft threshold removes z = 0.1 entirely once beta t > 0.1.
  auto one = unit_area_cell();
  const CellField z1(one, 0.1);
  CHECK(stationarity(z1, CellField(one, 0.0), 0.5, prox::L1{1.0}) == doctest::Approx(0.1 / 0.5));
  // Below the threshold the step is beta t and the measure is beta.
  CHECK(stationarity(z1, CellField(one, 0.0), 0.05, prox::L1{1.0}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(stationarity(z1, z1, 0.0, prox::Zero{}), Error);
}

TEST_CASE("Cauchy point") {
  const TrParams p;
  auto m = unit_area_cell();
  const CellField zk(m, 0.0);

  SUBCASE("plain gradient step") {
    const CellField g(m, 0.3);
    const ZeroHessian B;
    const Model model(zk, g, B, prox::Zero{});
    const auto c = cauchy_point(model, 10.0, 1.0, p);
    CHECK(c.t == 1.0);
    CHECK(c.backtracks == 0);
    CHECK(c.z.values[0] == doctest::Approx(-0.3));
    CHECK(c.model_change == doctest::Approx(-0.09));
  }
  SUBCASE("scalar quadratic accepts t = 1") {
    // m(s) = s^2/2 - s: the step s = 1 decreases the model by 1/2.
    const CellField g(m, -1.0);
    const ScaledIdentity B(1.0);
    const Model model(zk, g, B, prox::Zero{});
    const auto c = cauchy_point(model, 100.0, 1.0, p);
    CHECK(c.t == 1.0);
    CHECK(c.z.values[0] == doctest::Approx(1.0));
    CHECK(c.model_change == doctest::Approx(-0.5));
    CHECK(c.model_change <= -p.mu_cauchy);
  }
  SUBCASE("small radius forces backtracking") {
    const CellField g(m, -1.0);
    const ZeroHessian B;
    const Model model(zk, g, B, prox::Zero{});
    const double delta = 1e-3;
    const auto c = cauchy_point(model, delta, 1.0, p);
    CHECK(std::abs(c.z.values[0]) <= delta);
    CHECK(c.t == std::ldexp(1.0, -10));  // largest power of one half below 1e-3
    CHECK(c.backtracks == 10);
  }
  SUBCASE("inconsistent curvature exhausts the backtracks") {
    const CellField g(m, 1.0);
    const ScaledIdentity B(1e30);
    const Model model(zk, g, B, prox::Zero{});
    CHECK_THROWS_AS(cauchy_point(model, 1.0, 1.0, p), Error);
  }
  SUBCASE("nonsmooth model") {
    const CellField z(m, 0.5), g(m, 0.0);
    const ZeroHessian B;
    const Model model(z, g, B, prox::L1{1.0});
    const auto c = cauchy_point(model, 10.0, 1.0, p);
    // Soft threshold at t = 1 lands on 0 and lowers phi by 1/2.
    CHECK(c.t == 1.0);
    CHECK(c.z.values[0] == 0.0);
    CHECK(c.model_change == doctest::Approx(-0.5));
  }
}

TEST_CASE("subproblem solver") {
  Eigen::Matrix2d a;
  a << 3, 1, 1, 2;
  const Eigen::Vector2d c(1.0, -2.0);
  problems::SyntheticQuadratic::Options o;
  problems::SyntheticQuadratic q(o);
  const CellField zk(q.current_mesh(), 0.0);
  const CellField g = q.gradient(zk, 0, 1).g;
  const OracleHessian B(q, zk);
  const Model model(zk, g, B, prox::Zero{});
  TrParams p;
  const double psi = stationarity(zk, g, 1.0, prox::Zero{});
  const auto cp = cauchy_point(model, 1e6, 1.0, p);

  SUBCASE("no iterations returns the Cauchy point") {
    p.subproblem_max_iter = 0;
    const auto s = solve_subproblem(model, 1e6, cp, psi, p);
    CHECK((s.z - cp.z).norm() == 0.0);
    CHECK(s.pred == doctest::Approx(-cp.model_change));
    CHECK(s.iterations == 0);
  }
  SUBCASE("unconstrained minimizer of a convex quadratic") {
    p.subproblem_max_iter = 500;
    p.subproblem_rel_tol = 0.0;
    const auto s = solve_subproblem(model, 1e6, cp, psi, p);
    const Eigen::Vector2d zstar = a.ldlt().solve(c);
    CHECK((vec(s.z) - zstar).norm() <= 1e-6);
    CHECK(s.pred >= -cp.model_change);
    // Model decrease at the minimizer: c' A^-1 c / 4 with cell areas 1/2.
    CHECK(s.pred == doctest::Approx(0.25 * c.dot(zstar)).epsilon(1e-10));
  }
  SUBCASE("iterates stay in the trust region") {
    p.subproblem_rel_tol = 0.0;
    const double delta = 0.2;
    const auto cps = cauchy_point(model, delta, 1.0, p);
    const auto s = solve_subproblem(model, delta, cps, psi, p);
    CHECK((s.z - zk).norm() <= delta * (1 + 1e-12));
    CHECK(s.pred >= -cps.model_change);
  }
  SUBCASE("box-volume model keeps feasibility") {
    const prox::BoxVolume box{0.0, 1.0, 0.3};
    const CellField z0(q.current_mesh(), 0.3);
    const CellField g0 = q.gradient(z0, 0, 1).g;
    const OracleHessian B0(q, z0);
    const Model mb(z0, g0, B0, box);
    const auto cpb = cauchy_point(mb, 10.0, 1.0, p);
    const auto s = solve_subproblem(mb, 10.0, cpb, stationarity(z0, g0, 1.0, box), p);
    CHECK(prox::phi_value(box, s.z) == 0.0);
    CHECK(s.pred > 0.0);
  }
}

TEST_CASE("value tolerance") {
  TrParams p;
  p.kappa_val = 1e6;
  const double expected = 1e6 * std::pow(0.999 * 0.999, 1.0 / 0.9);
  CHECK(value_tolerance(1.0, 1.0 - 1e-3, p) == doctest::Approx(expected));
  CHECK(expected / 1e6 == doctest::Approx(0.99778).epsilon(1e-5));
  CHECK_THROWS_AS(value_tolerance(0.0, 1.0, p), Error);
  CHECK_THROWS_AS(value_tolerance(-1.0, 1.0, p), Error);
  double last = 0.0;
  for (double pred : {1e-6, 1e-4, 1e-2, 0.5, 0.99, 2.0}) {
    const double t = value_tolerance(pred, 1.0, p);
    CHECK(t >= last);
    last = t;
  }
  p.kappa_val = 0.0;
  CHECK(value_tolerance(1.0, 1.0, p) == 0.0);
}

TEST_CASE("derivative loop") {
  auto m = unit_area_cell();
  const TrParams p = quiet_params();

  SUBCASE("exact gradient needs one pass") {
    HalvingOracle o(m, 2.0, 0.0);
    CellField z(m, 0.0);
    const auto r = derivative_loop(o, z, 1.0, 1.0, prox::Zero{}, p);
    CHECK(r.passes == 1);
    CHECK(r.psi == doctest::Approx(2.0));
    CHECK_FALSE(r.degraded);
  }
  SUBCASE("halving estimate reaches 0.1 after four refinements") {
    // Psi = 1, Delta = 0.1: tau = 0.1 throughout; 1 / 2^4 < 0.1 < 1 / 2^3.
    HalvingOracle o(m, 1.0, 1.0);
    CellField z(m, 0.0);
    const auto r = derivative_loop(o, z, 0.1, 1.0, prox::Zero{}, p);
    CHECK(r.passes == 5);
    CHECK(r.xi == doctest::Approx(1.0 / 16));
    CHECK(r.tau == doctest::Approx(0.1));
  }
  SUBCASE("tolerance follows Psi when it is below Delta") {
    HalvingOracle o(m, 0.01, 1.0);
    CellField z(m, 0.0);
    const auto r = derivative_loop(o, z, 5.0, 1.0, prox::Zero{}, p);
    CHECK(r.xi <= 0.01);
    CHECK(r.xi > 0.005);
    CHECK(r.passes == 8);  // 2^-7 < 0.01 < 2^-6
  }
  SUBCASE("a capped oracle stops the loop and flags it") {
    HalvingOracle o(m, 1.0, 1.0);
    o.degrade_after = 2;
    CellField z(m, 0.0);
    const auto r = derivative_loop(o, z, 0.1, 1.0, prox::Zero{}, p);
    CHECK(r.passes == 2);
    CHECK(r.degraded);
  }
  SUBCASE("pass cap") {
    HalvingOracle o(m, 1.0, 1.0);
    TrParams capped = p;
    capped.max_derivative_passes = 3;
    CellField z(m, 0.0);
    const auto r = derivative_loop(o, z, 0.1, 1.0, prox::Zero{}, capped);
    CHECK(r.passes == 3);
    CHECK(r.degraded);
  }
}

TEST_CASE("radius update") {
  const TrParams p;
  auto a = accept_and_update(0.01, 4.0, p);
  CHECK_FALSE(a.accepted);
  CHECK(a.delta == doctest::Approx(1.0));
  a = accept_and_update(0.5, 4.0, p);
  CHECK(a.accepted);
  CHECK(a.delta == 4.0);
  a = accept_and_update(0.95, 4.0, p);
  CHECK(a.accepted);
  CHECK(a.delta == doctest::Approx(10.0));
  CHECK_FALSE(accept_and_update(std::nan(""), 4.0, p).accepted);
}

TEST_CASE("limited-memory secant model") {
  auto m = mesh::create_rect_mesh(2, 2);
  const auto n = static_cast<Eigen::Index>(m->cell_count());
  std::mt19937 gen(4);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd r(n, n);
  for (Eigen::Index i = 0; i < n * n; ++i) r.data()[i] = nd(gen);
  // Self-adjoint in the area-weighted product: H = W^-1 S with S symmetric positive definite.
  const Eigen::MatrixXd spd = r * r.transpose() + Eigen::MatrixXd::Identity(n, n);
  const Eigen::VectorXd w = m->areas();
  auto hess = [&](const CellField& v) { return CellField(m, Eigen::VectorXd(spd * v.values).cwiseQuotient(w)); };
  auto random = [&] {
    Eigen::VectorXd v(n);
    for (auto& x : v) x = nd(gen);
    return CellField(m, v);
  };

  LbfgsHessian B(3);
  CellField v = random();
  CHECK((B.apply(v) - v).norm() == 0.0);  // identity before any pair
  CHECK_FALSE(B.update(v, -1.0 * v));     // negative curvature is skipped
  CHECK(B.size() == 0);

  CellField s_last;
  for (int i = 0; i < 5; ++i) {
    s_last = random();
    CHECK(B.update(s_last, hess(s_last)));
  }
  CHECK(B.size() == 3);
  CHECK((B.apply(s_last) - hess(s_last)).norm() <= 1e-10 * hess(s_last).norm());

  for (int i = 0; i < 20; ++i) {
    const CellField x = random(), y = random();
    CHECK(B.apply(x).dot(y) == doctest::Approx(x.dot(B.apply(y))).epsilon(1e-10));
    CHECK(B.apply(x).dot(x) > 0.0);
  }

  // Norm estimate of a scaled identity.
  CHECK(estimate_norm(ScaledIdentity(3.0), m) == doctest::Approx(3.0));
  CHECK(estimate_norm(ZeroHessian{}, m) == 0.0);
}

TEST_CASE("trust-region run on a synthetic quadratic") {
  Eigen::Matrix2d a;
  a << 3, 1, 1, 2;
  const Eigen::Vector2d zstar = a.ldlt().solve(Eigen::Vector2d(1.0, -2.0));

  for (auto kind : {HessianKind::Zero, HessianKind::Exact, HessianKind::Lbfgs}) {
    CAPTURE(static_cast<int>(kind));
    problems::SyntheticQuadratic q({});
    TrParams p = quiet_params();
    p.hessian = kind;
    const auto r = run(q, prox::Zero{}, CellField(q.current_mesh(), 0.0), p);
    CHECK(r.status == RunStatus::Converged);
    CHECK(r.psi <= 1e-6);
    // Curvature-free steps zigzag; both curvature models finish within 30 steps.
    if (kind != HessianKind::Zero) CHECK(r.history.size() <= 31);
    CHECK((vec(r.z) - zstar).norm() <= 1e-5);
    CHECK(r.f == doctest::Approx(q.exact_value(r.z)));

    double last_f = r.history.front().f;
    for (const auto& rec : r.history) {
      if (rec.final) continue;
      CHECK(rec.step_norm <= p.kappa_rad * rec.delta * (1 + 1e-12));
      CHECK(rec.kappa_fcd > 0.0);
      CHECK(rec.pred >= rec.kappa_fcd * rec.psi * std::min(rec.delta, rec.psi / (1 + rec.hessian_norm)) * (1 - 1e-12));
      CHECK(rec.f <= last_f + 1e-14);
      last_f = rec.f;
      if (rec.accepted) CHECK(rec.cred >= p.eta1 * rec.pred);
    }
    CHECK(r.history.back().final);
  }
}

TEST_CASE("stationary start stops immediately") {
  problems::SyntheticQuadratic q({});
  const Eigen::Vector2d zstar = q.minimizer();
  const auto r = run(q, prox::Zero{}, CellField(q.current_mesh(), Eigen::VectorXd(zstar)), quiet_params());
  CHECK(r.status == RunStatus::Converged);
  REQUIRE(r.history.size() == 1);
  CHECK(r.history[0].final);
  CHECK_FALSE(r.history[0].accepted);
  CHECK(r.f == doctest::Approx(q.exact_value(r.z)));
}

TEST_CASE("run rejects an infeasible start and honours the iteration cap") {
  problems::SyntheticQuadratic q({});
  TrParams p = quiet_params();
  CHECK_THROWS_AS(run(q, prox::BoxVolume{0, 1, 0.5}, CellField(q.current_mesh(), 2.0), p), Error);
  p.max_iter = 2;
  p.psi_tol = 0.0;
  const auto r = run(q, prox::Zero{}, CellField(q.current_mesh(), 0.0), p);
  CHECK(r.status == RunStatus::IterationLimit);
  CHECK(r.history.size() == 3);
}

TEST_CASE("constrained synthetic run stays feasible") {
  problems::SyntheticQuadratic q({});
  const prox::BoxVolume box{0.0, 1.0, 0.25};
  TrParams p = quiet_params();
  p.hessian = HessianKind::Exact;
  std::vector<CellField> iterates;
  const auto r = run(q, box, CellField(q.current_mesh(), 0.25), p,
                     [&](const IterationRecord&, const CellField& z) { iterates.push_back(z); });
  CHECK(r.status == RunStatus::Converged);
  for (const auto& z : iterates) CHECK(prox::phi_value(box, z) == 0.0);
  // Minimizer on the segment z0 + z1 = 0.5, 0 <= z <= 1: f(t, 0.5 - t) is
  // smallest at t = 0.5 (the bound z1 >= 0 is active).
  CHECK(r.z.values[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(r.z.values[1] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("value noise inside the tolerance is harmless") {
  TrParams p = quiet_params();
  p.gamma = 0.04;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    problems::SyntheticQuadratic::Options o;
    o.noise = 1.0;
    o.seed = seed;
    problems::SyntheticQuadratic q(o);
    const auto r = run(q, prox::Zero{}, CellField(q.current_mesh(), 0.0), p);
    CHECK(r.status == RunStatus::Converged);
    CHECK((vec(r.z) - q.minimizer()).norm() <= 1e-5);
  }
}

TEST_CASE("history CSV") {
  IterationRecord r;
  r.k = 3;
  r.dofs = 225;
  r.f = 0.1;
  r.psi = 1e-7;
  r.delta = 50;
  r.accepted = true;
  std::ostringstream os;
  write_history_csv(os, {r});
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  CHECK(header == "k,dofs,F,psi,delta,rho,pred,cred,accepted,tau_val,tau_der,xi");
  CHECK(row == "3,225,0.10000000000000001,9.9999999999999995e-08,50,0,0,0,1,0,0,0");
}
