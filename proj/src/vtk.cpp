#include "afemtr/vtk.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

namespace afemtr::vtk {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write(std::ostream& os, const mesh::Mesh& mesh, const std::vector<NamedCellData>& cell_data,
           const std::vector<NamedPointData>& point_data) {
  const std::size_t nv = mesh.vertex_count(), nc = mesh.cell_count();
  os << "# vtk DataFile Version 3.0\nafemtr\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << nv << " double\n";
  for (const auto& p : mesh.vertices()) os << num(p.x) << ' ' << num(p.y) << " 0\n";
  os << "CELLS " << nc << ' ' << 4 * nc << '\n';
  for (const auto& t : mesh.cells()) os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  os << "CELL_TYPES " << nc << '\n';
  for (std::size_t c = 0; c < nc; ++c) os << "5\n";

  if (!cell_data.empty()) {
    os << "CELL_DATA " << nc << '\n';
    for (const auto& [name, values] : cell_data) {
      if (static_cast<std::size_t>(values->size()) != nc)
        throw Error("vtk: cell data '" + name + "' has the wrong length");
      os << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
      for (Eigen::Index i = 0; i < values->size(); ++i) os << num((*values)[i]) << '\n';
    }
  }
  if (!point_data.empty()) {
    os << "POINT_DATA " << nv << '\n';
    for (const auto& [name, fn] : point_data) {
      if (&fn->space->mesh() != &mesh) throw Error("vtk: point data '" + name + "' lives on another mesh");
      os << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
      // Vertex dofs come first in every Lagrange space.
      for (std::size_t v = 0; v < nv; ++v) os << num(fn->coeffs[static_cast<Eigen::Index>(v)]) << '\n';
    }
  }
}

void write_file(const std::string& path, const mesh::Mesh& mesh, const std::vector<NamedCellData>& cell_data,
                const std::vector<NamedPointData>& point_data) {
  std::ofstream os(path);
  if (!os) throw Error("vtk: cannot open " + path);
  write(os, mesh, cell_data, point_data);
}

}  // namespace afemtr::vtk
