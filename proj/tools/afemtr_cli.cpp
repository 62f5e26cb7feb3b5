// Command-line driver: run, check-gradient, estimate-rates, export-mesh.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "afemtr/config.hpp"
#include "afemtr/problems.hpp"
#include "afemtr/tr_core.hpp"
#include "afemtr/vtk.hpp"

namespace fs = std::filesystem;
using namespace afemtr;
using config::ProblemKind;
using mesh::CellField;

namespace {

constexpr int kExitConverged = 0;
constexpr int kExitError = 1;
constexpr int kExitCapped = 2;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  int snapshot_stride = -1;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value configuration file");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--snapshot-stride", args.snapshot_stride, "write iter_####.vtk every N iterations (0: off)");
  cmd->add_option("--set", args.sets, "override one key=value (repeatable)");
}

config::RunConfig load(const CommonArgs& args, const std::vector<std::string>& extra = {}) {
  config::KeyValues kv;
  for (const auto& s : extra) kv.set(s);
  if (!args.config_path.empty()) kv.load_file(args.config_path);
  for (const auto& s : args.sets) kv.set(s);
  if (!args.out_dir.empty()) kv.set("out", args.out_dir);
  if (args.snapshot_stride >= 0) kv.set("snapshot_stride", std::to_string(args.snapshot_stride));
  return config::resolve(kv);
}

// One oracle of any supported problem, plus what the driver needs from it.
struct Instance {
  std::unique_ptr<problems::PoissonControlProblem> poisson;
  std::unique_ptr<problems::TopoOptProblem> topo;
  std::unique_ptr<problems::SyntheticQuadratic> synthetic;
  tr::Oracle* oracle = nullptr;
  prox::ProxFunction phi;
  CellField z0;
};

Instance make_instance(const config::RunConfig& cfg) {
  Instance in;
  switch (cfg.problem) {
    case ProblemKind::Poisson:
      in.poisson = std::make_unique<problems::PoissonControlProblem>(cfg.poisson, problems::lshape_mesh(cfg.grid));
      in.oracle = in.poisson.get();
      in.phi = in.poisson->phi();
      in.z0 = in.poisson->initial_control();
      break;
    case ProblemKind::Topo1:
    case ProblemKind::Topo2:
      in.topo = std::make_unique<problems::TopoOptProblem>(
          cfg.topo, problems::symmetry_half_domain(cfg.topo.example, cfg.grid));
      in.oracle = in.topo.get();
      in.phi = in.topo->phi();
      in.z0 = in.topo->initial_control();
      break;
    case ProblemKind::Synthetic:
      in.synthetic = std::make_unique<problems::SyntheticQuadratic>(cfg.synthetic);
      in.oracle = in.synthetic.get();
      in.phi = prox::Zero{};
      in.z0 = CellField(in.oracle->current_mesh(), 0.0);
      break;
  }
  prox::validate(in.phi, in.oracle->current_mesh()->total_area());
  return in;
}

void write_snapshot(const Instance& in, const fs::path& path, const CellField& z) {
  std::vector<vtk::NamedCellData> cells{{"z", &z.values}};
  if (in.poisson && z.mesh == in.poisson->current_mesh()) {
    const auto s = in.poisson->state(z);
    vtk::write_file(path.string(), *z.mesh, cells, {{"u", &s.u}});
  } else if (in.topo && z.mesh == in.topo->current_mesh()) {
    const auto s = in.topo->solve(z);
    vtk::write_file(path.string(), *z.mesh, cells, {{"rho", &s.rho}, {"u", &s.u}});
  } else {
    vtk::write_file(path.string(), *z.mesh, cells);
  }
}

struct Summary {
  std::string status = "error";
  int iterations = 0;
  int accepted = 0;
  double psi = std::numeric_limits<double>::quiet_NaN();
  double f = std::numeric_limits<double>::quiet_NaN();
  std::size_t dofs = 0;
  std::size_t cells = 0;
  bool degraded = false;
  double seconds = 0.0;
  std::string message;
};

void write_summary(const fs::path& dir, const Summary& s) {
  std::ofstream os(dir / "summary.txt");
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "status=" << s.status << "\niterations=" << s.iterations << "\naccepted_steps=" << s.accepted
     << "\nfinal_psi=" << num(s.psi) << "\nfinal_F=" << num(s.f) << "\nfinal_dofs=" << s.dofs
     << "\nfinal_cells=" << s.cells << "\ndegraded=" << (s.degraded ? 1 : 0) << "\nwall_time_s=" << num(s.seconds)
     << "\nmessage=" << s.message << '\n';
}

int cmd_run(const CommonArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  Summary summary;
  fs::path out = args.out_dir.empty() ? fs::path("out") : fs::path(args.out_dir);
  try {
    const config::RunConfig cfg = load(args);
    out = cfg.out_dir;
    fs::create_directories(out);
    {
      std::ofstream(out / "manifest.txt") << config::manifest(cfg);
    }
    for (const auto& w : cfg.tr.validate()) std::cerr << "warning: " << w << '\n';

    Instance in = make_instance(cfg);
    tr::Observer observer;
    if (cfg.snapshot_stride > 0) {
      observer = [&](const tr::IterationRecord& rec, const CellField& z) {
        if (rec.k % cfg.snapshot_stride != 0 && !rec.final) return;
        char name[32];
        std::snprintf(name, sizeof name, "iter_%04d.vtk", rec.k);
        write_snapshot(in, out / name, z);
      };
    }
    const tr::RunResult result = tr::run(*in.oracle, in.phi, in.z0, cfg.tr, observer);
    {
      std::ofstream csv(out / "history.csv");
      tr::write_history_csv(csv, result.history);
    }
    summary.status = result.status == tr::RunStatus::Converged ? "converged" : "iteration_limit";
    summary.iterations = static_cast<int>(result.history.size()) - 1;
    for (const auto& r : result.history) {
      summary.accepted += r.accepted ? 1 : 0;
      summary.degraded = summary.degraded || r.degraded;
    }
    summary.psi = result.psi;
    summary.f = result.f;
    summary.dofs = in.oracle->dof_count();
    summary.cells = result.z.mesh->cell_count();
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_summary(out, summary);
    std::cout << "status " << summary.status << ", iterations " << summary.iterations << ", psi " << summary.psi
              << ", F " << summary.f << ", dofs " << summary.dofs << ", " << summary.seconds << " s\n";
    return result.status == tr::RunStatus::Converged ? kExitConverged : kExitCapped;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    summary.message = e.what();
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::error_code ec;
    fs::create_directories(out, ec);
    if (!ec) write_summary(out, summary);
    return kExitError;
  }
}

// Central-difference check of <g, d> at random feasible points.
int cmd_check_gradient(const CommonArgs& args, int points, bool flip_adjoint, double step) {
  try {
    if (points <= 0) throw Error("check-gradient: --points must be positive");
    // Coarsest grid that still resolves the boundary layout.
    const bool sink = load(args).problem == ProblemKind::Topo2;
    config::RunConfig cfg = load(args, {sink ? "grid=8" : "grid=4"});
    cfg.poisson.flip_adjoint = flip_adjoint;
    if (flip_adjoint && cfg.problem != ProblemKind::Poisson)
      throw Error("check-gradient: --flip-adjoint applies to the poisson problem only");
    Instance in = make_instance(cfg);
    const auto mesh = in.oracle->current_mesh();
    const auto n = static_cast<Eigen::Index>(mesh->cell_count());
    std::mt19937_64 rng(cfg.synthetic.seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    auto random_field = [&](double lo, double hi) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) v[i] = lo + 0.5 * (uni(rng) + 1.0) * (hi - lo);
      return CellField(mesh, std::move(v));
    };

    std::function<double(const CellField&)> value;
    std::function<CellField(const CellField&)> grad;
    double tol = 1e-5;
    if (in.poisson) {
      value = [&](const CellField& z) { return in.poisson->smooth_value(z); };
      grad = [&](const CellField& z) { return in.poisson->smooth_gradient(z); };
    } else if (in.topo) {
      tol = 1e-4;
      value = [&](const CellField& z) { return in.topo->smooth_value(z); };
      grad = [&](const CellField& z) { return in.topo->smooth_gradient(z); };
    } else {
      value = [&](const CellField& z) { return in.synthetic->exact_value(z); };
      grad = [&](const CellField& z) { return in.synthetic->gradient(z, 0.0, 1.0).g; };
    }

    double worst = 0.0;
    for (int p = 0; p < points; ++p) {
      CellField z = random_field(-1.0, 1.0);
      if (in.topo) {
        const prox::BoxVolume inner{0.1, 0.9, cfg.topo.volume_fraction * mesh->total_area()};
        z = prox::project_box_volume(inner, random_field(0.0, 1.0));
      }
      const CellField d = random_field(-1.0, 1.0);
      const double fd = (value(z + step * d) - value(z - step * d)) / (2.0 * step);
      const double an = grad(z).dot(d);
      const double rel = std::abs(fd - an) / std::max(std::abs(an), 1e-300);
      worst = std::max(worst, rel);
      std::printf("point %d  fd % .12e  adjoint % .12e  rel %.3e\n", p, fd, an, rel);
    }
    const bool ok = worst <= tol;
    std::printf("max relative error %.3e (tolerance %.0e): %s\n", worst, tol, ok ? "PASS" : "FAIL");
    return ok ? 0 : kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}

int cmd_estimate_rates(int degree, int levels, int n0) {
  try {
    const auto rows = problems::manufactured_study(degree, levels, n0);
    std::vector<double> err, est;
    for (const auto& r : rows) {
      err.push_back(r.error);
      est.push_back(r.estimator);
    }
    const auto re = problems::observed_rates(err), rs = problems::observed_rates(est);
    std::printf("%5s %8s %12s %14s %14s %10s %10s %12s\n", "level", "dofs", "h", "H1 error", "estimator",
                "err rate", "est rate", "effectivity");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      char a[16] = "—", b[16] = "—";
      if (i > 0) {
        std::snprintf(a, sizeof a, "%.4f", re[i - 1]);
        std::snprintf(b, sizeof b, "%.4f", rs[i - 1]);
      }
      std::printf("%5d %8d %12.5e %14.6e %14.6e %10s %10s %12.4f\n", r.level, r.dofs, r.h, r.error, r.estimator, a,
                  b, r.estimator / r.error);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}

int cmd_export_mesh(const CommonArgs& args, int refinements) {
  try {
    const config::RunConfig cfg = load(args);
    Instance in = make_instance(cfg);
    auto m = in.oracle->current_mesh();
    for (int i = 0; i < refinements; ++i) m = mesh::bisect_all(m);
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    const auto stats = mesh::mesh_stats(*m);
    Eigen::VectorXd tags = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m->cell_count()));
    for (const auto& e : m->edges())
      if (e.on_boundary()) tags[e.cells[0]] = std::max(tags[e.cells[0]], static_cast<double>(e.tag));
    vtk::write_file((out / "mesh.vtk").string(), *m, {{"boundary_tag", &tags}});
    std::printf("cells %zu, vertices %zu, P1 dofs %zu, P2 dofs %zu, h_max %.6g, min angle %.4f deg\n",
                stats.cell_count, stats.vertex_count, m->vertex_count(), m->vertex_count() + m->edge_count(),
                stats.h_max, stats.min_angle_deg);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trust-region optimization with adaptive finite-element oracles"};
  app.require_subcommand(1);

  CommonArgs run_args, grad_args, mesh_args;
  auto* run = app.add_subcommand("run", "run the trust-region solver");
  add_common(run, run_args);

  auto* grad = app.add_subcommand("check-gradient", "finite-difference check of the gradient oracle");
  add_common(grad, grad_args);
  int points = 5;
  bool flip = false;
  double step = 1e-5;
  grad->add_option("--points", points, "number of random points");
  grad->add_option("--step", step, "central-difference step");
  grad->add_flag("--flip-adjoint", flip, "debug: negate the Poisson adjoint");

  auto* rates = app.add_subcommand("estimate-rates", "uniform-refinement study on a manufactured solution");
  int degree = 1, levels = 5, n0 = 2;
  rates->add_option("--degree", degree, "polynomial degree (1 or 2)");
  rates->add_option("--levels", levels, "number of levels");
  rates->add_option("--n0", n0, "initial grid size");

  auto* exp = app.add_subcommand("export-mesh", "write the initial mesh as VTK");
  add_common(exp, mesh_args);
  int refinements = 0;
  exp->add_option("--refine", refinements, "uniform bisection passes before export");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitError;
  }

  if (*run) return cmd_run(run_args);
  if (*grad) return cmd_check_gradient(grad_args, points, flip, step);
  if (*rates) return cmd_estimate_rates(degree, levels, n0);
  if (*exp) return cmd_export_mesh(mesh_args, refinements);
  return kExitError;
}
