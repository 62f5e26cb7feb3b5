#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "afemtr/fem.hpp"
#include "afemtr/mesh.hpp"

namespace afemtr::vtk {

using NamedCellData = std::pair<std::string, const Eigen::VectorXd*>;
using NamedPointData = std::pair<std::string, const fem::FeFunction*>;

/// Legacy ASCII unstructured grid: triangles (type 5), per-cell data and
/// finite-element functions sampled at the mesh vertices.
void write(std::ostream& os, const mesh::Mesh& mesh, const std::vector<NamedCellData>& cell_data = {},
           const std::vector<NamedPointData>& point_data = {});

void write_file(const std::string& path, const mesh::Mesh& mesh,
                const std::vector<NamedCellData>& cell_data = {},
                const std::vector<NamedPointData>& point_data = {});

}  // namespace afemtr::vtk
