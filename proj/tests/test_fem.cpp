#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "afemtr/fem.hpp"

using namespace afemtr;
using namespace afemtr::fem;
using mesh::BoundaryTag;
using mesh::Point;

namespace {

mesh::MeshPtr unit_triangle() {
  mesh::BoundaryTagMap tags;
  tags[mesh::edge_key(0, 1)] = BoundaryTag::Neumann;
  tags[mesh::edge_key(1, 2)] = BoundaryTag::Neumann;
  tags[mesh::edge_key(2, 0)] = BoundaryTag::Neumann;
  return std::make_shared<const mesh::Mesh>(std::vector<Point>{{0, 0}, {1, 0}, {0, 1}},
                                            std::vector<std::array<int, 3>>{{0, 1, 2}}, tags);
}

Eigen::MatrixXd dense(const SparseOperator& a) { return Eigen::MatrixXd(a); }

double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

}  // namespace

TEST_CASE("quadrature rules") {
  for (int order : {2, 5}) {
    double w = 0.0;
    for (const auto& q : triangle_rule(order)) w += q.weight;
    CHECK(w == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(triangle_rule(7), Error);

  // Reference triangle: integral of x^a y^b = a! b! / (a + b + 2)!, area 1/2.
  for (int a = 0; a <= 5; ++a)
    for (int b = 0; a + b <= 5; ++b) {
      double sum = 0.0;
      for (const auto& q : triangle_rule(5)) {
        const double x = q.bary[1], y = q.bary[2];
        sum += 0.5 * q.weight * std::pow(x, a) * std::pow(y, b);
      }
      CHECK(sum == doctest::Approx(factorial(a) * factorial(b) / factorial(a + b + 2)).epsilon(1e-13));
    }
  for (int k = 0; k <= 5; ++k) {
    double sum = 0.0;
    for (const auto& p : edge_rule()) sum += p.weight * std::pow(p.s, k);
    CHECK(sum == doctest::Approx(1.0 / (k + 1)).epsilon(1e-13));
  }
}

TEST_CASE("space dimensions and Dirichlet masks") {
  auto m = mesh::create_rect_mesh(1, 1);
  auto p1 = build_space(m, 1);
  CHECK(p1->dof_count() == 4);
  for (int i = 0; i < 4; ++i) CHECK(p1->is_dirichlet(i));
  auto p2 = build_space(m, 2);
  CHECK(p2->dof_count() == 9);
  int masked = 0;
  for (int i = 0; i < 9; ++i) masked += p2->is_dirichlet(i);
  CHECK(masked == 8);  // the diagonal midpoint is interior
  CHECK_THROWS_AS(build_space(m, 3), Error);

  auto free = build_space(m, 2, {});
  for (int i = 0; i < 9; ++i) CHECK_FALSE(free->is_dirichlet(i));

  // Masked dofs lie on the boundary of the unit square.
  auto big = build_space(mesh::create_rect_mesh(4, 4), 2);
  const auto pts = big->dof_points();
  for (int i = 0; i < big->dof_count(); ++i) {
    const Point p = pts[static_cast<std::size_t>(i)];
    const bool edge = p.x < 1e-14 || p.y < 1e-14 || p.x > 1 - 1e-14 || p.y > 1 - 1e-14;
    CHECK(big->is_dirichlet(i) == edge);
  }
}

TEST_CASE("P1 stiffness on the unit right triangle") {
  auto s = build_space(unit_triangle(), 1, {});
  const Eigen::MatrixXd a = dense(assemble_diffusion(*s, 1.0));
  Eigen::Matrix3d expected;
  expected << 1, -0.5, -0.5, -0.5, 0.5, 0, -0.5, 0, 0.5;
  CHECK((a - expected).norm() < 1e-14);
  const Eigen::MatrixXd a2 = dense(assemble_diffusion(*s, 2.0));
  CHECK((a2 - 2.0 * expected).norm() < 1e-14);
  CHECK_THROWS_AS(assemble_diffusion(*s, 0.0), Error);
  CHECK_THROWS_AS(assemble_diffusion(*s, Eigen::VectorXd::Constant(1, -1.0)), Error);
}

TEST_CASE("P1 mass on the unit right triangle") {
  auto s = build_space(unit_triangle(), 1, {});
  const Eigen::MatrixXd lumped = dense(assemble_mass(*s, 1.0, true));
  CHECK((lumped - Eigen::Matrix3d::Identity() / 6.0).norm() < 1e-15);
  const Eigen::MatrixXd consistent = dense(assemble_mass(*s, 1.0, false));
  Eigen::Matrix3d expected;
  expected << 2, 1, 1, 1, 2, 1, 1, 1, 2;
  expected /= 24.0;
  CHECK((consistent - expected).norm() < 1e-15);
  CHECK((consistent.rowwise().sum() - lumped.diagonal()).norm() < 1e-15);
  CHECK(dense(assemble_mass(*s, 0.0, false)).norm() == 0.0);
}

TEST_CASE("P2 element matrices against closed forms") {
  // Mass of quadratic Lagrange elements: |T|/180 times
  // vertex-vertex 6 / -1, vertex-opposite-midpoint -4, midpoint-midpoint 32 / 16.
  auto m = unit_triangle();
  auto s = build_space(m, 2, {});
  Eigen::MatrixXd expected(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      double v;
      if (i < 3 && j < 3) v = i == j ? 6 : -1;
      else if (i >= 3 && j >= 3) v = i == j ? 32 : 16;
      else v = (i < 3 ? i == j - 3 : j == i - 3) ? -4 : 0;
      expected(i, j) = v * 0.5 / 180.0;
    }
  CHECK((dense(assemble_mass(*s, 1.0, false)) - expected).norm() < 1e-14);

  // Stiffness annihilates constants; energy of x^2 on the unit square is 4/3.
  auto sq = build_space(mesh::create_rect_mesh(3, 3), 2, {});
  const SparseOperator k = assemble_diffusion(*sq, 1.0);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(sq->dof_count());
  CHECK((k * one).norm() < 1e-12);
  const auto u = interpolate(sq, [](Point p) { return p.x * p.x; });
  CHECK(u.coeffs.dot(k * u.coeffs) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  // Mass of x^2: integral of x^4 = 1/5.
  CHECK(u.coeffs.dot(assemble_mass(*sq, 1.0, false) * u.coeffs) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("load vectors") {
  auto m = mesh::create_rect_mesh(1, 1);
  auto s = build_space(m, 1, {});
  CHECK(assemble_load(*s, mesh::CellField(m, 0.0)).norm() == 0.0);
  CHECK(assemble_load(*s, mesh::CellField(m, 1.0)).sum() == doctest::Approx(1.0));

  // Each cell has area 1/2; a P1 hat integrates to |T|/3 on every cell it touches.
  Eigen::VectorXd zv(2);
  zv << 1.0, 2.0;
  const mesh::CellField z(m, zv);
  const Eigen::VectorXd b = assemble_load(*s, z);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(4);
  for (int c = 0; c < 2; ++c)
    for (int v : m->cell(c)) expected[v] += zv[c] / 6.0;
  CHECK((b - expected).norm() < 1e-15);
  CHECK(b.sum() == doctest::Approx(1.5));

  // The cell load operator reproduces the same vector.
  CHECK((cell_load_operator(*s) * zv - expected).norm() < 1e-15);

  auto sd = build_space(m, 1);
  CHECK(assemble_load(*sd, z).norm() == 0.0);
}

TEST_CASE("reduced stiffness is SPD and consistent on linear functions") {
  auto m = mesh::bisect_all(mesh::create_rect_mesh(3, 3));
  for (int degree : {1, 2}) {
    auto s = build_space(m, degree);
    const Eigen::MatrixXd a = dense(eliminate_dirichlet(assemble_diffusion(*s, 1.0), *s));
    CHECK((a - a.transpose()).norm() < 1e-12 * a.norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);

    auto free = build_space(m, degree, {});
    const SparseOperator k = assemble_diffusion(*free, 1.0);
    const auto u = interpolate(free, [](Point p) { return 2.0 * p.x - 3.0 * p.y + 1.0; });
    const Eigen::VectorXd r = k * u.coeffs;
    const auto pts = free->dof_points();
    for (int i = 0; i < free->dof_count(); ++i) {
      const Point p = pts[static_cast<std::size_t>(i)];
      const bool interior = p.x > 1e-12 && p.y > 1e-12 && p.x < 1 - 1e-12 && p.y < 1 - 1e-12;
      if (interior) CHECK(std::abs(r[i]) < 1e-12);
    }
  }
}

TEST_CASE("SPD solver") {
  SparseOperator id(5, 5);
  id.setIdentity();
  Eigen::VectorXd rhs = Eigen::VectorXd::LinSpaced(5, -1.0, 3.0);
  CHECK((solve_spd(id, rhs, 1e-12).x - rhs).norm() == 0.0);

  SUBCASE("small Poisson problem matches a dense factorization") {
    auto s = build_space(mesh::create_rect_mesh(3, 3), 1);
    int free = 0;
    for (int i = 0; i < s->dof_count(); ++i) free += !s->is_dirichlet(i);
    CHECK(free == 4);
    const SparseOperator a = eliminate_dirichlet(assemble_diffusion(*s, 1.0), *s);
    const Eigen::VectorXd b = assemble_load(*s, mesh::CellField(s->mesh_ptr(), 1.0));
    const Eigen::VectorXd x_ref = dense(a).ldlt().solve(b);
    CHECK((solve_spd(a, b, 1e-14).x - x_ref).norm() <= 1e-10 * x_ref.norm());
  }

  SUBCASE("moderate P2 problem matches a dense factorization") {
    auto s = build_space(mesh::create_rect_mesh(10, 10), 2);
    REQUIRE(s->dof_count() <= 500);
    const SparseOperator a = eliminate_dirichlet(assemble_diffusion(*s, 1.0), *s);
    const Eigen::VectorXd b = assemble_load(*s, [](int, const Point& p, const Bary&) {
      return std::exp(p.x) * std::cos(3.0 * p.y);
    });
    const Eigen::VectorXd x_ref = dense(a).ldlt().solve(b);
    const SolveResult r = solve_spd(a, b, 1e-14);
    CHECK((r.x - x_ref).norm() <= 1e-8 * x_ref.norm());
    CHECK(r.residual_norm <= 1e-14 * b.norm());
    CHECK((b - a * r.x).norm() == doctest::Approx(r.residual_norm).epsilon(1e-6));

    // Deterministic: identical inputs give identical iterates.
    const SolveResult again = solve_spd(a, b, 1e-14);
    CHECK(again.iterations == r.iterations);
    CHECK((again.x - r.x).norm() == 0.0);

    SpdSolver solver(a);
    CHECK_THROWS_AS(solver.solve(b, 1e-14, {}, 1), Error);
  }

  SparseOperator rect(2, 3);
  CHECK_THROWS_AS(SpdSolver{rect}, Error);
}

TEST_CASE("discrete dual norm") {
  auto s = build_space(mesh::create_rect_mesh(4, 4), 2);
  const DualNorm dual(*s, 1e-13);
  const Eigen::MatrixXd r = dense(dual.riesz());
  const int n = s->dof_count();
  CHECK(dual(Eigen::VectorXd::Zero(n)) == 0.0);

  int interior = 0;
  while (s->is_dirichlet(interior)) ++interior;
  const Eigen::VectorXd e1 = Eigen::VectorXd::Unit(n, interior);
  CHECK(dual(r * e1) == doctest::Approx(std::sqrt(r(interior, interior))).epsilon(1e-10));

  std::mt19937 gen(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x[i] = s->is_dirichlet(i) ? 0.0 : u(gen);
  const Eigen::VectorXd rx = r * x;
  const double nx = dual(rx);
  CHECK(nx == doctest::Approx(std::sqrt(x.dot(rx))).epsilon(1e-8));
  CHECK(dual(2.0 * rx) == doctest::Approx(2.0 * nx).epsilon(1e-10));
  CHECK(dual_norm(*s, rx) == doctest::Approx(nx).epsilon(1e-8));

  // The Riesz matrix is stiffness plus mass on the reduced space.
  const Eigen::MatrixXd km =
      dense(eliminate_dirichlet(assemble_diffusion(*s, 1.0) + assemble_mass(*s, 1.0, false), *s));
  CHECK((km - r).norm() < 1e-12);
}

TEST_CASE("exact gradients") {
  auto m = mesh::bisect_all(mesh::create_rect_mesh(2, 2));
  auto p1 = build_space(m, 1, {});
  for (const auto& g : cell_gradients(interpolate(p1, [](Point) { return 3.0; })))
    for (const auto& v : g) CHECK(v.norm() < 1e-14);
  const auto gx = cell_gradients(interpolate(p1, [](Point p) { return p.x; }));
  REQUIRE(gx.size() == m->cell_count());
  for (const auto& g : gx) {
    REQUIRE(g.size() == 1);
    CHECK((g[0] - Vec2(1.0, 0.0)).norm() < 1e-13);
  }

  auto p2 = build_space(m, 2, {});
  const auto u = interpolate(p2, [](Point p) { return p.x * p.x; });
  const auto gq = cell_gradients(u);
  const auto rule = triangle_rule(5);
  for (std::size_t c = 0; c < m->cell_count(); ++c) {
    REQUIRE(gq[c].size() == rule.size());
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = p2->point(static_cast<int>(c), rule[q].bary);
      CHECK((gq[c][q] - Vec2(2.0 * x.x, 0.0)).norm() < 1e-12);
    }
    CHECK(u.laplacian(static_cast<int>(c)) == doctest::Approx(2.0));
  }
  CHECK_THROWS_AS(FeFunction(p2, Eigen::VectorXd::Zero(3)), Error);
}

TEST_CASE("P1 and P2 discretization errors converge at the nominal rates") {
  // Energy error of the Galerkin solution for -Laplace u = 2 pi^2 sin(pi x) sin(pi y).
  const double pi = 3.141592653589793;
  for (int degree : {1, 2}) {
    std::vector<double> err;
    for (int n : {4, 8, 16}) {
      auto s = build_space(mesh::create_rect_mesh(n, n), degree);
      const SparseOperator a = eliminate_dirichlet(assemble_diffusion(*s, 1.0), *s);
      const Eigen::VectorXd b = assemble_load(*s, [pi](int, const Point& p, const Bary&) {
        return 2 * pi * pi * std::sin(pi * p.x) * std::sin(pi * p.y);
      });
      const FeFunction uh(s, solve_spd(a, b, 1e-13).x);
      double e2 = 0.0;
      for (std::size_t c = 0; c < s->mesh().cell_count(); ++c)
        for (const auto& q : triangle_rule(5)) {
          const int ci = static_cast<int>(c);
          const Point x = s->point(ci, q.bary);
          const Vec2 exact(pi * std::cos(pi * x.x) * std::sin(pi * x.y), pi * std::sin(pi * x.x) * std::cos(pi * x.y));
          e2 += q.weight * s->mesh().area(ci) * (uh.gradient(ci, q.bary) - exact).squaredNorm();
        }
      err.push_back(std::sqrt(e2));
    }
    for (std::size_t i = 1; i < err.size(); ++i)
      CHECK(std::log2(err[i - 1] / err[i]) == doctest::Approx(degree).epsilon(0.15 / degree));
  }
}
