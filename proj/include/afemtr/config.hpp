#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <string>

#include "afemtr/problems.hpp"
#include "afemtr/tr_core.hpp"

namespace afemtr::config {

/// Flat key=value settings. Blank lines and lines starting with '#' are
/// ignored; later assignments win.
class KeyValues {
 public:
  void parse(std::istream& is, const std::string& origin = "<stream>");
  void load_file(const std::string& path);
  /// Applies one "key=value" assignment.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

enum class ProblemKind { Poisson, Topo1, Topo2, Synthetic };

struct RunConfig {
  ProblemKind problem = ProblemKind::Poisson;
  tr::TrParams tr;
  problems::PoissonControlProblem::Options poisson;
  problems::TopoOptProblem::Options topo;
  problems::SyntheticQuadratic::Options synthetic;
  int grid = 8;                    ///< initial grid cells per unit length
  std::string target = "one";      ///< u_d selector for the Poisson problem
  double target_scale = 1.0;       ///< multiplies u_d
  std::string out_dir = "out";
  int snapshot_stride = 0;         ///< 0 disables VTK snapshots
};

/// Applies the problem's defaults, then every key; unknown keys and
/// malformed values throw.
RunConfig resolve(const KeyValues& kv);

/// Poisson targets selectable by name.
std::function<double(mesh::Point)> target_function(const std::string& name);

std::string problem_name(ProblemKind kind);

/// Every resolved parameter as key=value lines.
std::string manifest(const RunConfig& cfg);

}  // namespace afemtr::config
