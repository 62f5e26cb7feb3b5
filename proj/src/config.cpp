#include "afemtr/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

namespace afemtr::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw Error("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

tr::HessianKind to_hessian(const std::string& v) {
  if (v == "zero") return tr::HessianKind::Zero;
  if (v == "exact") return tr::HessianKind::Exact;
  if (v == "lbfgs") return tr::HessianKind::Lbfgs;
  throw Error("config: hessian must be zero, exact or lbfgs, got '" + v + "'");
}

std::string hessian_name(tr::HessianKind h) {
  switch (h) {
    case tr::HessianKind::Zero: return "zero";
    case tr::HessianKind::Exact: return "exact";
    case tr::HessianKind::Lbfgs: return "lbfgs";
  }
  return "zero";
}

ProblemKind to_problem(const std::string& v) {
  if (v == "poisson") return ProblemKind::Poisson;
  if (v == "topo1") return ProblemKind::Topo1;
  if (v == "topo2") return ProblemKind::Topo2;
  if (v == "synthetic") return ProblemKind::Synthetic;
  throw Error("config: unknown problem '" + v + "'");
}

void apply_defaults(RunConfig& cfg) {
  switch (cfg.problem) {
    case ProblemKind::Poisson:
      cfg.tr.kappa_val = cfg.tr.kappa_der = 1e6;
      cfg.tr.hessian = tr::HessianKind::Exact;
      cfg.poisson.dof_budget = 10000;
      cfg.grid = 8;
      break;
    case ProblemKind::Topo1:
    case ProblemKind::Topo2:
      cfg.tr.kappa_val = cfg.tr.kappa_der = 1e9;
      cfg.tr.hessian = tr::HessianKind::Lbfgs;
      cfg.topo.example = cfg.problem == ProblemKind::Topo1 ? 1 : 2;
      cfg.topo.volume_fraction = cfg.problem == ProblemKind::Topo1 ? 0.4 : 0.1;
      cfg.topo.dof_budget = 30000;
      cfg.grid = 16;
      break;
    case ProblemKind::Synthetic:
      cfg.tr.kappa_val = cfg.tr.kappa_der = 1.0;
      cfg.tr.hessian = tr::HessianKind::Zero;
      cfg.tr.max_iter = 100;
      cfg.grid = 1;
      break;
  }
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <class T>
Setter real(T RunConfig::*group, double T::*field) {
  return [group, field](RunConfig& c, const std::string& k, const std::string& v) {
    (c.*group).*field = to_double(k, v);
  };
}

template <class T, class I>
Setter integer(T RunConfig::*group, I T::*field) {
  return [group, field](RunConfig& c, const std::string& k, const std::string& v) {
    (c.*group).*field = static_cast<I>(to_int(k, v));
  };
}

const std::map<std::string, Setter>& setters() {
  using P = problems::PoissonControlProblem::Options;
  using T = problems::TopoOptProblem::Options;
  static const std::map<std::string, Setter> table = {
      {"delta0", real(&RunConfig::tr, &tr::TrParams::delta0)},
      {"eta1", real(&RunConfig::tr, &tr::TrParams::eta1)},
      {"eta2", real(&RunConfig::tr, &tr::TrParams::eta2)},
      {"gamma1", real(&RunConfig::tr, &tr::TrParams::gamma1)},
      {"gamma2", real(&RunConfig::tr, &tr::TrParams::gamma2)},
      {"gamma3", real(&RunConfig::tr, &tr::TrParams::gamma3)},
      {"kappa_val", real(&RunConfig::tr, &tr::TrParams::kappa_val)},
      {"kappa_der", real(&RunConfig::tr, &tr::TrParams::kappa_der)},
      {"tau_max_val", real(&RunConfig::tr, &tr::TrParams::tau_max_val)},
      {"tau_max_der", real(&RunConfig::tr, &tr::TrParams::tau_max_der)},
      {"gamma", real(&RunConfig::tr, &tr::TrParams::gamma)},
      {"eps0", real(&RunConfig::tr, &tr::TrParams::eps0)},
      {"eps_decay", real(&RunConfig::tr, &tr::TrParams::eps_decay)},
      {"j", real(&RunConfig::tr, &tr::TrParams::j)},
      {"psi_tol", real(&RunConfig::tr, &tr::TrParams::psi_tol)},
      {"max_iter", integer(&RunConfig::tr, &tr::TrParams::max_iter)},
      {"kappa_rad", real(&RunConfig::tr, &tr::TrParams::kappa_rad)},
      {"mu_cauchy", real(&RunConfig::tr, &tr::TrParams::mu_cauchy)},
      {"max_backtracks", integer(&RunConfig::tr, &tr::TrParams::max_backtracks)},
      {"subproblem_max_iter", integer(&RunConfig::tr, &tr::TrParams::subproblem_max_iter)},
      {"subproblem_rel_tol", real(&RunConfig::tr, &tr::TrParams::subproblem_rel_tol)},
      {"max_derivative_passes", integer(&RunConfig::tr, &tr::TrParams::max_derivative_passes)},
      {"lbfgs_memory", integer(&RunConfig::tr, &tr::TrParams::lbfgs_memory)},
      {"hessian", [](RunConfig& c, const std::string&, const std::string& v) { c.tr.hessian = to_hessian(v); }},
      {"kappa",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.tr.kappa_val = c.tr.kappa_der = to_double(k, v);
       }},
      {"theta",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.tr.theta = c.poisson.theta = c.topo.theta = to_double(k, v);
       }},
      {"dof_budget",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto n = to_int(k, v);
         if (n <= 0) throw Error("config: dof_budget must be positive");
         c.poisson.dof_budget = c.topo.dof_budget = static_cast<std::size_t>(n);
       }},
      {"alpha", real(&RunConfig::poisson, &P::alpha)},
      {"beta", real(&RunConfig::poisson, &P::beta)},
      {"degree", integer(&RunConfig::poisson, &P::degree)},
      {"target", [](RunConfig& c, const std::string&, const std::string& v) {
         target_function(v);
         c.target = v;
       }},
      {"target_scale",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.target_scale = to_double(k, v); }},
      {"volume_fraction", real(&RunConfig::topo, &T::volume_fraction)},
      {"k_min", real(&RunConfig::topo, &T::k_min)},
      {"k_max", real(&RunConfig::topo, &T::k_max)},
      {"source", real(&RunConfig::topo, &T::source)},
      {"filter_radius", real(&RunConfig::topo, &T::filter_radius)},
      {"noise", real(&RunConfig::synthetic, &problems::SyntheticQuadratic::Options::noise)},
      {"seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synthetic.seed = static_cast<std::uint64_t>(to_int(k, v));
       }},
      {"grid",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.grid = static_cast<int>(to_int(k, v));
         if (c.grid < 1) throw Error("config: grid must be positive");
       }},
      {"out", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"snapshot_stride",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.snapshot_stride = static_cast<int>(to_int(k, v));
         if (c.snapshot_stride < 0) throw Error("config: snapshot_stride must be nonnegative");
       }},
  };
  return table;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void KeyValues::parse(std::istream& is, const std::string& origin) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error("config: " + origin + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw Error("config: " + origin + ":" + std::to_string(lineno) + ": empty key");
    values_[key] = trim(t.substr(eq + 1));
  }
}

void KeyValues::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("config: cannot open " + path);
  parse(is, path);
}

void KeyValues::set(const std::string& assignment) {
  std::istringstream is(assignment);
  parse(is, "--set " + assignment);
  if (trim(assignment).empty()) throw Error("config: empty --set assignment");
}

std::function<double(mesh::Point)> target_function(const std::string& name) {
  using std::numbers::pi;
  if (name == "sin2pi")
    return [](mesh::Point p) { return std::sin(2.0 * pi * p.x) * std::sin(2.0 * pi * p.y); };
  if (name == "sinpi") return [](mesh::Point p) { return std::sin(pi * p.x) * std::sin(pi * p.y); };
  if (name == "one") return [](mesh::Point) { return 1.0; };
  throw Error("config: unknown target '" + name + "'");
}

std::string problem_name(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::Poisson: return "poisson";
    case ProblemKind::Topo1: return "topo1";
    case ProblemKind::Topo2: return "topo2";
    case ProblemKind::Synthetic: return "synthetic";
  }
  return "poisson";
}

RunConfig resolve(const KeyValues& kv) {
  RunConfig cfg;
  if (kv.has("problem")) cfg.problem = to_problem(kv.values().at("problem"));
  apply_defaults(cfg);
  const auto& table = setters();
  for (const auto& [key, value] : kv.values()) {
    if (key == "problem") continue;
    const auto it = table.find(key);
    if (it == table.end()) throw Error("config: unknown key '" + key + "'");
    it->second(cfg, key, value);
  }
  cfg.poisson.target = [f = target_function(cfg.target), s = cfg.target_scale](mesh::Point p) { return s * f(p); };
  cfg.tr.validate();
  return cfg;
}

std::string manifest(const RunConfig& c) {
  std::ostringstream os;
  const auto& t = c.tr;
  os << "problem=" << problem_name(c.problem) << '\n'
     << "delta0=" << num(t.delta0) << "\neta1=" << num(t.eta1) << "\neta2=" << num(t.eta2)
     << "\ngamma1=" << num(t.gamma1) << "\ngamma2=" << num(t.gamma2) << "\ngamma3=" << num(t.gamma3)
     << "\ntheta=" << num(t.theta) << "\nkappa_val=" << num(t.kappa_val) << "\nkappa_der=" << num(t.kappa_der)
     << "\ntau_max_val=" << num(t.tau_max_val) << "\ntau_max_der=" << num(t.tau_max_der)
     << "\ngamma=" << num(t.gamma) << "\neps0=" << num(t.eps0) << "\neps_decay=" << num(t.eps_decay)
     << "\nj=" << num(t.j) << "\npsi_tol=" << num(t.psi_tol) << "\nmax_iter=" << t.max_iter
     << "\nkappa_rad=" << num(t.kappa_rad) << "\nmu_cauchy=" << num(t.mu_cauchy)
     << "\nmax_backtracks=" << t.max_backtracks << "\nsubproblem_max_iter=" << t.subproblem_max_iter
     << "\nsubproblem_rel_tol=" << num(t.subproblem_rel_tol)
     << "\nmax_derivative_passes=" << t.max_derivative_passes << "\nhessian=" << hessian_name(t.hessian)
     << "\nlbfgs_memory=" << t.lbfgs_memory << "\ngrid=" << c.grid << '\n';
  switch (c.problem) {
    case ProblemKind::Poisson:
      os << "alpha=" << num(c.poisson.alpha) << "\nbeta=" << num(c.poisson.beta) << "\ndegree=" << c.poisson.degree
         << "\ntarget=" << c.target << "\ntarget_scale=" << num(c.target_scale) << "\ndof_budget=" << c.poisson.dof_budget << '\n';
      break;
    case ProblemKind::Topo1:
    case ProblemKind::Topo2:
      os << "volume_fraction=" << num(c.topo.volume_fraction) << "\nk_min=" << num(c.topo.k_min)
         << "\nk_max=" << num(c.topo.k_max) << "\nsource=" << num(c.topo.source)
         << "\nfilter_radius=" << num(c.topo.filter_radius) << "\ndof_budget=" << c.topo.dof_budget << '\n';
      break;
    case ProblemKind::Synthetic:
      os << "noise=" << num(c.synthetic.noise) << "\nseed=" << c.synthetic.seed << '\n';
      break;
  }
  os << "snapshot_stride=" << c.snapshot_stride << '\n';
  return os.str();
}

}  // namespace afemtr::config
