#include "afemtr/mesh.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

namespace afemtr::mesh {

namespace {

std::atomic<std::uint64_t> next_mesh_id{1};

double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }

}  // namespace

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::uint64_t edge_key(int a, int b) {
  const auto lo = static_cast<std::uint64_t>(std::min(a, b));
  const auto hi = static_cast<std::uint64_t>(std::max(a, b));
  return (lo << 32) | hi;
}

Mesh::Mesh(std::vector<Point> vertices, std::vector<std::array<int, 3>> cells,
           BoundaryTagMap boundary_tags, std::vector<int> parent,
           MeshPtr previous)
    : vertices_(std::move(vertices)),
      cells_(std::move(cells)),
      boundary_tags_(std::move(boundary_tags)),
      parent_(std::move(parent)),
      previous_(std::move(previous)),
      id_(next_mesh_id.fetch_add(1)) {
  if (cells_.empty()) throw Error("mesh has no cells");
  if (!parent_.empty() && parent_.size() != cells_.size())
    throw Error("parent map length does not match cell count");
  if (previous_) generation_ = previous_->generation() + 1;

  const auto n = static_cast<Eigen::Index>(cells_.size());
  areas_.resize(n);
  diameters_.resize(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& t = cells_[c];
    for (int v : t)
      if (v < 0 || static_cast<std::size_t>(v) >= vertices_.size())
        throw Error("cell references a missing vertex");
    areas_[c] = signed_area(static_cast<int>(c));
    if (!(areas_[c] > 0.0)) throw Error("cell " + std::to_string(c) + " is not positively oriented");
    const Point a = vertices_[t[0]], b = vertices_[t[1]], d = vertices_[t[2]];
    diameters_[c] = std::max({distance(a, b), distance(b, d), distance(d, a)});
  }
  total_area_ = areas_.sum();
  build_edges();
}

void Mesh::build_edges() {
  std::unordered_map<std::uint64_t, int> lookup;
  lookup.reserve(cells_.size() * 2);
  cell_edges_.assign(cells_.size(), {kNone, kNone, kNone});
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    for (int k = 0; k < 3; ++k) {
      const int a = cells_[c][(k + 1) % 3];
      const int b = cells_[c][(k + 2) % 3];
      const auto key = edge_key(a, b);
      auto [it, inserted] = lookup.try_emplace(key, static_cast<int>(edges_.size()));
      if (inserted) {
        Edge e;
        e.vertices = {a, b};
        e.cells[0] = static_cast<int>(c);
        e.local[0] = k;
        edges_.push_back(e);
      } else {
        Edge& e = edges_[it->second];
        if (e.cells[1] != kNone)
          throw Error("edge shared by more than two cells");
        e.cells[1] = static_cast<int>(c);
        e.local[1] = k;
      }
      cell_edges_[c][k] = it->second;
    }
  }
  for (auto& e : edges_) {
    if (!e.on_boundary()) continue;
    auto it = boundary_tags_.find(edge_key(e.vertices[0], e.vertices[1]));
    if (it == boundary_tags_.end())
      throw Error("non-conforming mesh: edge with a single cell lies inside the domain");
    e.tag = it->second;
  }
}

double Mesh::edge_length(int e) const {
  return distance(vertices_[edges_[e].vertices[0]], vertices_[edges_[e].vertices[1]]);
}

Point Mesh::centroid(int c) const {
  const auto& t = cells_[c];
  return (1.0 / 3.0) * (vertices_[t[0]] + vertices_[t[1]] + vertices_[t[2]]);
}

double Mesh::signed_area(int c) const {
  const auto& t = cells_[c];
  return 0.5 * cross(vertices_[t[1]] - vertices_[t[0]], vertices_[t[2]] - vertices_[t[0]]);
}

MeshPtr create_rect_mesh(int nx, int ny, Rect domain, QuadSplit split,
                         const CellPredicate& keep,
                         const BoundaryClassifier& classify) {
  if (nx < 1 || ny < 1) throw Error("create_rect_mesh: nx and ny must be at least 1");
  if (!(domain.x1 > domain.x0) || !(domain.y1 > domain.y0))
    throw Error("create_rect_mesh: degenerate domain");

  std::vector<Point> verts;
  const double dx = (domain.x1 - domain.x0) / nx;
  const double dy = (domain.y1 - domain.y0) / ny;
  auto grid = [nx](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) verts.push_back({domain.x0 + i * dx, domain.y0 + j * dy});

  std::vector<std::array<int, 3>> cells;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int a = grid(i, j), b = grid(i + 1, j), c = grid(i + 1, j + 1), d = grid(i, j + 1);
      if (split == QuadSplit::Diagonal) {
        cells.push_back({a, b, d});
        cells.push_back({c, d, b});
      } else {
        const int m = static_cast<int>(verts.size());
        verts.push_back({domain.x0 + (i + 0.5) * dx, domain.y0 + (j + 0.5) * dy});
        cells.push_back({m, a, b});
        cells.push_back({m, b, c});
        cells.push_back({m, c, d});
        cells.push_back({m, d, a});
      }
    }
  }

  if (keep) {
    std::erase_if(cells, [&](const std::array<int, 3>& t) {
      return !keep((1.0 / 3.0) * (verts[t[0]] + verts[t[1]] + verts[t[2]]));
    });
    if (cells.empty()) throw Error("create_rect_mesh: mask removed every cell");
    std::vector<int> renumber(verts.size(), kNone);
    for (const auto& t : cells)
      for (int v : t) renumber[v] = 0;
    std::vector<Point> used;
    for (std::size_t v = 0; v < verts.size(); ++v) {
      if (renumber[v] == kNone) continue;
      renumber[v] = static_cast<int>(used.size());
      used.push_back(verts[v]);
    }
    for (auto& t : cells)
      for (int& v : t) v = renumber[v];
    verts = std::move(used);
  }

  std::unordered_map<std::uint64_t, int> count;
  for (const auto& t : cells)
    for (int k = 0; k < 3; ++k) ++count[edge_key(t[(k + 1) % 3], t[(k + 2) % 3])];
  BoundaryTagMap tags;
  for (const auto& t : cells) {
    for (int k = 0; k < 3; ++k) {
      const int a = t[(k + 1) % 3], b = t[(k + 2) % 3];
      if (count[edge_key(a, b)] != 1) continue;
      tags[edge_key(a, b)] = classify ? classify(verts[a], verts[b]) : BoundaryTag::Dirichlet;
    }
  }
  return std::make_shared<const Mesh>(std::move(verts), std::move(cells), std::move(tags));
}

MeshPtr bisect(const MeshPtr& mesh_ptr, std::span<const int> marked, int max_depth) {
  const Mesh& mesh = *mesh_ptr;
  if (marked.empty()) return mesh_ptr;

  // Closure: an edge can only be split after the refinement edge of every
  // cell containing it.
  std::vector<char> split(mesh.edge_count(), 0);
  std::vector<int> work;
  for (int c : marked) {
    if (c < 0 || static_cast<std::size_t>(c) >= mesh.cell_count())
      throw Error("bisect: marked cell id out of range");
    const int e = mesh.cell_edges(c)[0];
    if (!split[e]) {
      split[e] = 1;
      work.push_back(e);
    }
  }
  while (!work.empty()) {
    const int e = work.back();
    work.pop_back();
    for (int side = 0; side < 2; ++side) {
      const int c = mesh.edge(e).cells[side];
      if (c == kNone) continue;
      const int r = mesh.cell_edges(c)[0];
      if (!split[r]) {
        split[r] = 1;
        work.push_back(r);
      }
    }
  }

  std::vector<Point> verts = mesh.vertices();
  std::unordered_map<std::uint64_t, int> midpoint;
  BoundaryTagMap tags = mesh.boundary_tags();
  for (std::size_t e = 0; e < mesh.edge_count(); ++e) {
    if (!split[e]) continue;
    const auto [a, b] = mesh.edge(static_cast<int>(e)).vertices;
    const int m = static_cast<int>(verts.size());
    verts.push_back(0.5 * (mesh.vertex(a) + mesh.vertex(b)));
    midpoint[edge_key(a, b)] = m;
    if (mesh.edge(static_cast<int>(e)).on_boundary()) {
      const auto tag = tags.at(edge_key(a, b));
      tags.erase(edge_key(a, b));
      tags[edge_key(a, m)] = tag;
      tags[edge_key(m, b)] = tag;
    }
  }

  std::vector<std::array<int, 3>> cells;
  std::vector<int> parent;
  cells.reserve(mesh.cell_count() * 2);
  parent.reserve(mesh.cell_count() * 2);

  std::function<void(std::array<int, 3>, int, int)> refine =
      [&](std::array<int, 3> t, int owner, int depth) {
        if (depth > max_depth)
          throw Error("bisect: closure exceeded the depth bound; refinement edges are inconsistent");
        auto it = midpoint.find(edge_key(t[1], t[2]));
        if (it == midpoint.end()) {
          cells.push_back(t);
          parent.push_back(owner);
          return;
        }
        const int m = it->second;
        refine({m, t[0], t[1]}, owner, depth + 1);
        refine({m, t[2], t[0]}, owner, depth + 1);
      };
  for (std::size_t c = 0; c < mesh.cell_count(); ++c)
    refine(mesh.cell(static_cast<int>(c)), static_cast<int>(c), 0);

  return std::make_shared<const Mesh>(std::move(verts), std::move(cells), std::move(tags),
                                      std::move(parent), mesh_ptr);
}

MeshPtr bisect_all(const MeshPtr& mesh) {
  std::vector<int> all(mesh->cell_count());
  std::iota(all.begin(), all.end(), 0);
  return bisect(mesh, all);
}

std::vector<int> dorfler_mark(std::span<const double> indicators, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw Error("dorfler_mark: theta must lie in (0,1)");
  double total = 0.0;
  for (double v : indicators) {
    if (v < 0.0 || std::isnan(v)) throw Error("dorfler_mark: indicators must be nonnegative");
    total += v;
  }
  if (total <= 0.0) return {};
  std::vector<int> order(indicators.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return indicators[a] > indicators[b]; });
  const double goal = theta * total;
  std::vector<int> chosen;
  double sum = 0.0;
  for (int c : order) {
    if (sum >= goal) break;
    chosen.push_back(c);
    sum += indicators[c];
  }
  return chosen;
}

CellField::CellField(MeshPtr m, double fill)
    : mesh(std::move(m)),
      values(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(mesh->cell_count()), fill)) {}

CellField::CellField(MeshPtr m, Eigen::VectorXd v) : mesh(std::move(m)), values(std::move(v)) {
  if (static_cast<std::size_t>(values.size()) != mesh->cell_count())
    throw Error("CellField: value count does not match cell count");
}

double CellField::integral() const { return areas().dot(values); }

double CellField::dot(const CellField& other) const {
  if (other.mesh != mesh) throw Error("CellField::dot: fields live on different meshes");
  return (areas().array() * values.array() * other.values.array()).sum();
}

double CellField::norm() const { return std::sqrt(dot(*this)); }

namespace {
void require_same_mesh(const CellField& a, const CellField& b) {
  if (a.mesh != b.mesh) throw Error("CellField arithmetic across different meshes");
}
}  // namespace

CellField operator+(const CellField& a, const CellField& b) {
  require_same_mesh(a, b);
  return {a.mesh, Eigen::VectorXd(a.values + b.values)};
}

CellField operator-(const CellField& a, const CellField& b) {
  require_same_mesh(a, b);
  return {a.mesh, Eigen::VectorXd(a.values - b.values)};
}

CellField operator*(double s, const CellField& a) { return {a.mesh, Eigen::VectorXd(s * a.values)}; }

bool descends_from(const Mesh& mesh, const Mesh& ancestor) {
  const Mesh* m = &mesh;
  while (m) {
    if (m->id() == ancestor.id()) return true;
    m = m->previous().get();
  }
  return false;
}

std::vector<int> ancestor_map(const Mesh& source, const MeshPtr& target) {
  std::vector<const Mesh*> chain;
  const Mesh* m = target.get();
  while (m && m->id() != source.id()) {
    chain.push_back(m);
    m = m->previous().get();
  }
  if (!m) throw Error("prolongation between meshes of different hierarchies");

  std::vector<int> map(source.cell_count());
  std::iota(map.begin(), map.end(), 0);
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    const Mesh& child = **it;
    std::vector<int> next(child.cell_count());
    for (std::size_t c = 0; c < child.cell_count(); ++c)
      next[c] = map[child.parent(static_cast<int>(c))];
    map = std::move(next);
  }
  return map;
}

CellField prolong_cellfield(const CellField& field, const MeshPtr& target) {
  if (field.mesh == target) return field;
  const auto map = ancestor_map(*field.mesh, target);
  Eigen::VectorXd v(static_cast<Eigen::Index>(map.size()));
  for (std::size_t c = 0; c < map.size(); ++c) v[static_cast<Eigen::Index>(c)] = field.values[map[c]];
  return {target, std::move(v)};
}

double min_angle_deg(const Mesh& mesh, int c) {
  const auto& t = mesh.cell(c);
  double best = 180.0;
  for (int k = 0; k < 3; ++k) {
    const Point p = mesh.vertex(t[k]);
    const Point u = mesh.vertex(t[(k + 1) % 3]) - p;
    const Point w = mesh.vertex(t[(k + 2) % 3]) - p;
    const double ang = std::atan2(std::abs(cross(u, w)), u.x * w.x + u.y * w.y);
    best = std::min(best, ang * 180.0 / std::numbers::pi);
  }
  return best;
}

MeshStats mesh_stats(const Mesh& mesh) {
  MeshStats s;
  s.cell_count = mesh.cell_count();
  s.vertex_count = mesh.vertex_count();
  s.h_max = 0.0;
  s.h_min = std::numeric_limits<double>::infinity();
  s.min_angle_deg = 180.0;
  for (std::size_t c = 0; c < mesh.cell_count(); ++c) {
    const int ci = static_cast<int>(c);
    s.h_max = std::max(s.h_max, mesh.diameter(ci));
    s.h_min = std::min(s.h_min, mesh.diameter(ci));
    s.min_angle_deg = std::min(s.min_angle_deg, min_angle_deg(mesh, ci));
  }
  return s;
}

std::vector<std::string> audit(const Mesh& mesh) {
  std::vector<std::string> problems;
  for (std::size_t c = 0; c < mesh.cell_count(); ++c)
    if (!(mesh.signed_area(static_cast<int>(c)) > 0.0))
      problems.push_back("cell " + std::to_string(c) + " has nonpositive area");

  // A hanging node in an NVB mesh sits at the midpoint of a one-sided edge.
  std::map<std::pair<double, double>, int> position;
  for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
    position[{mesh.vertex(static_cast<int>(v)).x, mesh.vertex(static_cast<int>(v)).y}] = static_cast<int>(v);
  std::vector<int> degree(mesh.vertex_count(), 0);
  for (std::size_t e = 0; e < mesh.edge_count(); ++e) {
    const Edge& edge = mesh.edge(static_cast<int>(e));
    ++degree[edge.vertices[0]];
    ++degree[edge.vertices[1]];
    if (!edge.on_boundary()) continue;
    if (edge.tag == BoundaryTag::Interior)
      problems.push_back("boundary edge " + std::to_string(e) + " has no boundary tag");
    const Point m = 0.5 * (mesh.vertex(edge.vertices[0]) + mesh.vertex(edge.vertices[1]));
    if (position.count({m.x, m.y}))
      problems.push_back("hanging node at the midpoint of edge " + std::to_string(e));
  }
  for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
    if (degree[v] == 0) problems.push_back("vertex " + std::to_string(v) + " is unused");
  return problems;
}

}  // namespace afemtr::mesh
