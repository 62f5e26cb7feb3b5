#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace afemtr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace mesh {

constexpr int kNone = -1;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
double distance(Point a, Point b);

enum class BoundaryTag : std::uint8_t { Interior = 0, Dirichlet = 1, Neumann = 2 };

struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
};

/// How each quad of a structured grid is split into triangles.
enum class QuadSplit {
  Diagonal,    ///< two triangles along the (x1,y0)-(x0,y1) diagonal
  CrissCross,  ///< four triangles meeting at the quad center
};

struct Edge {
  std::array<int, 2> vertices{kNone, kNone};
  /// Adjacent cells; cells[1] == kNone on the boundary.
  std::array<int, 2> cells{kNone, kNone};
  /// Local edge index within each adjacent cell.
  std::array<int, 2> local{kNone, kNone};
  BoundaryTag tag = BoundaryTag::Interior;

  bool on_boundary() const { return cells[1] == kNone; }
};

class Mesh;
using MeshPtr = std::shared_ptr<const Mesh>;

/// Key of an undirected edge (a, b); symmetric in its arguments.
std::uint64_t edge_key(int a, int b);

using BoundaryTagMap = std::unordered_map<std::uint64_t, BoundaryTag>;

/// Conforming triangulation with newest-vertex bisection metadata.
///
/// Local vertex 0 of every cell is its newest vertex; the refinement edge is
/// the opposite edge (local vertices 1 and 2). Local edge k is opposite
/// local vertex k. A mesh never changes after construction: refinement
/// produces a child mesh that keeps a pointer to its parent, so any two
/// meshes of one hierarchy can be related through the per-cell parent map.
class Mesh {
 public:
  Mesh(std::vector<Point> vertices, std::vector<std::array<int, 3>> cells,
       BoundaryTagMap boundary_tags, std::vector<int> parent = {},
       MeshPtr previous = nullptr);

  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t cell_count() const { return cells_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  const std::vector<Point>& vertices() const { return vertices_; }
  const std::vector<std::array<int, 3>>& cells() const { return cells_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Point& vertex(int v) const { return vertices_[v]; }
  const std::array<int, 3>& cell(int c) const { return cells_[c]; }
  const Edge& edge(int e) const { return edges_[e]; }
  /// Global edge ids of a cell, local edge k opposite local vertex k.
  const std::array<int, 3>& cell_edges(int c) const { return cell_edges_[c]; }
  const BoundaryTagMap& boundary_tags() const { return boundary_tags_; }

  double area(int c) const { return areas_[c]; }
  const Eigen::VectorXd& areas() const { return areas_; }
  double total_area() const { return total_area_; }
  /// Longest edge of the cell.
  double diameter(int c) const { return diameters_[c]; }
  double edge_length(int e) const;
  Point centroid(int c) const;
  double signed_area(int c) const;

  /// Parent cell in previous(); kNone for a root mesh.
  int parent(int c) const { return parent_.empty() ? kNone : parent_[c]; }
  const MeshPtr& previous() const { return previous_; }
  int generation() const { return generation_; }
  /// Process-unique identifier; distinct meshes never share one.
  std::uint64_t id() const { return id_; }

 private:
  void build_edges();

  std::vector<Point> vertices_;
  std::vector<std::array<int, 3>> cells_;
  std::vector<Edge> edges_;
  std::vector<std::array<int, 3>> cell_edges_;
  BoundaryTagMap boundary_tags_;
  std::vector<int> parent_;
  MeshPtr previous_;
  int generation_ = 0;
  std::uint64_t id_ = 0;
  Eigen::VectorXd areas_;
  Eigen::VectorXd diameters_;
  double total_area_ = 0.0;
};

using CellPredicate = std::function<bool(Point centroid)>;
using BoundaryClassifier = std::function<BoundaryTag(Point a, Point b)>;

/// Structured triangulation of an axis-aligned rectangle.
///
/// Cells whose centroid fails `keep` are dropped. Boundary edges are tagged
/// by `classify` (Dirichlet everywhere when empty). The refinement edge of
/// every triangle is its hypotenuse.
MeshPtr create_rect_mesh(int nx, int ny, Rect domain = {},
                         QuadSplit split = QuadSplit::Diagonal,
                         const CellPredicate& keep = {},
                         const BoundaryClassifier& classify = {});

/// Newest-vertex bisection of the marked cells plus the conforming closure.
/// Every cell of the result records the cell of `mesh` that contains it.
MeshPtr bisect(const MeshPtr& mesh, std::span<const int> marked,
               int max_depth = 100);

/// Bisects every cell once.
MeshPtr bisect_all(const MeshPtr& mesh);

/// Minimal Dörfler set: largest indicators first (ties by lower cell id)
/// until their sum reaches theta times the total.
std::vector<int> dorfler_mark(std::span<const double> indicators, double theta);

/// Piecewise-constant field on the cells of a mesh.
struct CellField {
  MeshPtr mesh;
  Eigen::VectorXd values;

  CellField() = default;
  CellField(MeshPtr m, double fill = 0.0);
  CellField(MeshPtr m, Eigen::VectorXd v);

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  const Eigen::VectorXd& areas() const { return mesh->areas(); }
  double integral() const;
  /// Area-weighted L2 inner product.
  double dot(const CellField& other) const;
  double norm() const;
};

CellField operator+(const CellField& a, const CellField& b);
CellField operator-(const CellField& a, const CellField& b);
CellField operator*(double s, const CellField& a);

/// True when `ancestor` is `mesh` or one of its predecessors.
bool descends_from(const Mesh& mesh, const Mesh& ancestor);

/// For every cell of `target`, the index of its ancestor cell in `source`.
std::vector<int> ancestor_map(const Mesh& source, const MeshPtr& target);

/// Copies each value to the descendants of its cell in `target`.
CellField prolong_cellfield(const CellField& field, const MeshPtr& target);

struct MeshStats {
  double h_max = 0.0;
  double h_min = 0.0;
  double min_angle_deg = 0.0;
  std::size_t cell_count = 0;
  std::size_t vertex_count = 0;
};

MeshStats mesh_stats(const Mesh& mesh);

/// Smallest interior angle of one cell, in degrees.
double min_angle_deg(const Mesh& mesh, int c);

/// Structural problems found by audit(); empty when the mesh is valid.
std::vector<std::string> audit(const Mesh& mesh);

}  // namespace mesh
}  // namespace afemtr
