#include "afemtr/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace afemtr::estimate {

using mesh::Mesh;

EllipticData EllipticData::constant(double a, double b, fem::SourceFunction q) {
  EllipticData d;
  d.coeff = [a](int, const Bary&) { return a; };
  d.reaction = b;
  d.source = std::move(q);
  return d;
}

Eigen::VectorXd EstimatorBreakdown::marking_indicators() const {
  if (kind == NormKind::Energy) return per_cell;
  return (scale * per_cell).array().square().matrix();
}

namespace {

struct Residuals {
  const fem::FeFunction& u;
  const EllipticData& data;
  const fem::FeSpace& space;
  const Mesh& mesh;

  Residuals(const fem::FeFunction& fn, const EllipticData& d)
      : u(fn), data(d), space(*fn.space), mesh(fn.space->mesh()) {}

  double volume(int cell, const Bary& b) const {
    const double a = data.coeff(cell, b);
    double r = data.source(cell, space.point(cell, b), b) + a * u.laplacian(cell) -
               data.reaction * u.value(cell, b);
    if (data.coeff_gradient) r += data.coeff_gradient(cell, b).dot(u.gradient(cell, b));
    return r;
  }

  // Barycentric coordinates, in `cell`, of the point at parameter s along
  // the edge from vertex `from` to vertex `to`.
  Bary edge_bary(int cell, int from, int to, double s) const {
    Bary b{0.0, 0.0, 0.0};
    const auto& t = mesh.cell(cell);
    for (int k = 0; k < 3; ++k) {
      if (t[k] == from) b[k] = 1.0 - s;
      if (t[k] == to) b[k] = s;
    }
    return b;
  }

  Vec2 flux(int cell, const Bary& b) const { return data.coeff(cell, b) * u.gradient(cell, b); }

  Vec2 unit_normal(const mesh::Edge& e) const {
    const auto p = mesh.vertex(e.vertices[0]), q = mesh.vertex(e.vertices[1]);
    Vec2 n(q.y - p.y, p.x - q.x);
    return n / n.norm();
  }

  // Normal flux jump (interior) or normal flux (boundary) at parameter s.
  double edge_residual(const mesh::Edge& e, double s) const {
    const Vec2 n = unit_normal(e);
    const int from = e.vertices[0], to = e.vertices[1];
    double r = flux(e.cells[0], edge_bary(e.cells[0], from, to, s)).dot(n);
    if (!e.on_boundary()) r -= flux(e.cells[1], edge_bary(e.cells[1], from, to, s)).dot(n);
    return r;
  }

  bool neumann(const mesh::Edge& e) const {
    return e.on_boundary() && !space.is_dirichlet_tag(e.tag);
  }
};

constexpr std::array<Bary, 3> kVertices = {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};

}  // namespace

EstimatorBreakdown energy_estimator(const fem::FeFunction& u, const EllipticData& data) {
  const Residuals res(u, data);
  const Mesh& m = res.mesh;
  EstimatorBreakdown out;
  out.kind = NormKind::Energy;
  out.mesh = u.space->mesh_ptr();
  out.per_cell = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.cell_count()));
  std::array<double, 3> sq{0.0, 0.0, 0.0};

  for (std::size_t c = 0; c < m.cell_count(); ++c) {
    const int ci = static_cast<int>(c);
    double integral = 0.0;
    for (const auto& q : fem::triangle_rule(5)) {
      const double r = res.volume(ci, q.bary);
      integral += q.weight * r * r;
    }
    const double h = m.diameter(ci);
    const double term = h * h * integral * m.area(ci);
    out.per_cell[ci] += term;
    sq[0] += term;
  }

  for (std::size_t e = 0; e < m.edge_count(); ++e) {
    const auto& edge = m.edge(static_cast<int>(e));
    const bool interior = !edge.on_boundary();
    if (!interior && !res.neumann(edge)) continue;
    const double he = m.edge_length(static_cast<int>(e));
    double integral = 0.0;
    for (const auto& g : fem::edge_rule()) {
      const double r = res.edge_residual(edge, g.s);
      integral += g.weight * r * r;
    }
    const double term = he * he * integral;
    if (interior) {
      sq[1] += term;
      out.per_cell[edge.cells[0]] += 0.5 * term;
      out.per_cell[edge.cells[1]] += 0.5 * term;
    } else {
      sq[2] += term;
      out.per_cell[edge.cells[0]] += term;
    }
  }

  for (int i = 0; i < 3; ++i) out.parts[i] = std::sqrt(sq[i]);
  out.total = std::sqrt(sq[0] + sq[1] + sq[2]);
  return out;
}

EstimatorBreakdown linf_estimator(const fem::FeFunction& u, const EllipticData& data) {
  const Residuals res(u, data);
  const Mesh& m = res.mesh;
  EstimatorBreakdown out;
  out.kind = NormKind::LInf;
  out.mesh = u.space->mesh_ptr();
  out.per_cell = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.cell_count()));

  double h_max = 0.0;
  for (std::size_t c = 0; c < m.cell_count(); ++c) {
    const int ci = static_cast<int>(c);
    double peak = 0.0;
    for (const auto& q : fem::triangle_rule(5)) peak = std::max(peak, std::abs(res.volume(ci, q.bary)));
    for (const auto& v : kVertices) peak = std::max(peak, std::abs(res.volume(ci, v)));
    const double h = m.diameter(ci);
    h_max = std::max(h_max, h);
    out.per_cell[ci] = h * h * peak;
    out.parts[0] = std::max(out.parts[0], out.per_cell[ci]);
  }

  for (std::size_t e = 0; e < m.edge_count(); ++e) {
    const auto& edge = m.edge(static_cast<int>(e));
    const bool interior = !edge.on_boundary();
    if (!interior && !res.neumann(edge)) continue;
    double peak = 0.0;
    for (const auto& g : fem::edge_rule()) peak = std::max(peak, std::abs(res.edge_residual(edge, g.s)));
    peak = std::max({peak, std::abs(res.edge_residual(edge, 0.0)), std::abs(res.edge_residual(edge, 1.0))});
    const double term = m.edge_length(static_cast<int>(e)) * peak;
    auto& part = out.parts[interior ? 1 : 2];
    part = std::max(part, term);
    for (int side = 0; side < 2; ++side) {
      const int c = edge.cells[side];
      if (c != mesh::kNone) out.per_cell[c] = std::max(out.per_cell[c], term);
    }
  }

  const double log_h = std::log(std::max(h_max, std::numeric_limits<double>::epsilon()));
  out.scale = log_h * log_h;
  out.total = out.scale * (out.parts[0] + out.parts[1] + out.parts[2]);
  return out;
}

Eigen::VectorXd combined_indicator(const EstimatorBreakdown& state, const EstimatorBreakdown* adjoint) {
  Eigen::VectorXd out = state.marking_indicators();
  if (adjoint) {
    if (adjoint->mesh != state.mesh) throw Error("combined_indicator: breakdowns on different meshes");
    out += adjoint->marking_indicators();
  }
  return out;
}

}  // namespace afemtr::estimate
