#include "afemtr/tr_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace afemtr::tr {

namespace {

constexpr double kCurvatureTol = 1e-12;
constexpr double kAlphaMin = 1e-10;
constexpr double kAlphaMax = 1e10;
constexpr int kLineHalvings = 30;

bool same_mesh(const CellField& a, const CellField& b) { return a.mesh == b.mesh; }

}  // namespace

std::vector<std::string> TrParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("invalid trust-region parameter: ") + what);
  };
  require(delta0 > 0.0, "delta0 > 0");
  require(0.0 < eta1 && eta1 < eta2 && eta2 < 1.0, "0 < eta1 < eta2 < 1");
  require(0.0 < gamma1 && gamma1 <= gamma2 && gamma2 <= 1.0, "0 < gamma1 <= gamma2 <= 1");
  require(gamma3 >= 1.0, "gamma3 >= 1");
  require(0.0 < theta && theta < 1.0, "0 < theta < 1");
  require(kappa_val > 0.0 && kappa_der > 0.0, "kappa > 0");
  require(tau_max_val > 0.0 && tau_max_der > 0.0, "tau_max > 0");
  require(0.0 < gamma && gamma < 1.0, "0 < gamma < 1");
  require(eps0 > 0.0 && eps_decay > 0.0 && eps_decay <= 1.0, "eps0 > 0, 0 < eps_decay <= 1");
  require(0.0 < j && j < 1.0, "0 < j < 1");
  require(psi_tol >= 0.0, "psi_tol >= 0");
  require(max_iter >= 0, "max_iter >= 0");
  require(kappa_rad >= 1.0, "kappa_rad >= 1");
  require(mu_cauchy > 0.0 && mu_cauchy < 1.0, "0 < mu_cauchy < 1");
  require(max_backtracks > 0 && subproblem_max_iter >= 0 && max_derivative_passes > 0,
          "iteration caps");
  require(lbfgs_memory > 0, "lbfgs_memory > 0");

  std::vector<std::string> warnings;
  if (gamma2 >= 1.0) warnings.emplace_back("gamma2 = 1 is outside the open interval (gamma1, 1)");
  if (gamma >= std::min(eta1, 1.0 - eta2))
    warnings.emplace_back("gamma >= min(eta1, 1 - eta2); the value-tolerance bound is not guaranteed");
  return warnings;
}

double TrParams::epsilon(int k) const { return eps0 * std::pow(eps_decay, k); }

CellField Oracle::hessian_apply(const CellField&, const CellField&) {
  throw Error("this oracle does not provide Hessian products");
}

bool LbfgsHessian::update(const CellField& s, const CellField& y) {
  const double ss = s.dot(s);
  const double sy = s.dot(y);
  if (!(ss > 0.0) || sy <= kCurvatureTol * ss) return false;
  s_.push_back(s);
  y_.push_back(y);
  if (static_cast<int>(s_.size()) > memory_) {
    s_.erase(s_.begin());
    y_.erase(y_.begin());
  }
  rebuild();
  return true;
}

void LbfgsHessian::transfer(const Oracle& oracle) {
  for (auto& s : s_) s = oracle.transfer(s);
  for (auto& y : y_) y = oracle.transfer(y);
  rebuild();
}

void LbfgsHessian::rebuild() {
  bs_.clear();
  if (s_.empty()) return;
  const auto& s = s_.back();
  const auto& y = y_.back();
  sigma_ = s.dot(y) / s.dot(s);
  for (std::size_t i = 0; i < s_.size(); ++i) {
    CellField b = sigma_ * s_[i];
    for (std::size_t k = 0; k < i; ++k) {
      b.values -= (bs_[k].dot(s_[i]) / s_[k].dot(bs_[k])) * bs_[k].values;
      b.values += (y_[k].dot(s_[i]) / y_[k].dot(s_[k])) * y_[k].values;
    }
    bs_.push_back(std::move(b));
  }
}

CellField LbfgsHessian::apply(const CellField& v) const {
  if (s_.empty()) return v;
  CellField out = sigma_ * v;
  for (std::size_t k = 0; k < s_.size(); ++k) {
    out.values -= (bs_[k].dot(v) / s_[k].dot(bs_[k])) * bs_[k].values;
    out.values += (y_[k].dot(v) / y_[k].dot(s_[k])) * y_[k].values;
  }
  return out;
}

double stationarity(const CellField& z, const CellField& g, double t, const ProxFunction& phi) {
  if (!(t > 0.0)) throw Error("stationarity: t must be positive");
  const CellField y = prox::prox_apply(phi, z - t * g, t);
  return (y - z).norm() / t;
}

Model::Model(const CellField& z_k, const CellField& g, const ModelHessian& hessian, const ProxFunction& phi)
    : z_k_(z_k), g_(g), hessian_(hessian), phi_(phi), phi_k_(prox::phi_value(phi, z_k)) {
  if (!same_mesh(z_k, g)) throw Error("Model: iterate and gradient on different meshes");
  if (!std::isfinite(phi_k_)) throw Error("Model: center is outside the domain of phi");
}

double Model::decrease_from_center(const CellField& z) const {
  const CellField s = z - z_k_;
  double m = g_.dot(s) + prox::phi_value(phi_, z) - phi_k_;
  if (!hessian_.is_zero()) m += 0.5 * hessian_.apply(s).dot(s);
  return m;
}

CauchyResult cauchy_point(const Model& model, double delta, double t0, const TrParams& params) {
  const CellField& z_k = model.center();
  const double radius = params.kappa_rad * delta;
  double t = t0;
  CauchyResult out;
  for (int i = 0;; ++i) {
    CellField z = prox::prox_apply(model.phi(), z_k - t * model.gradient(), t);
    const double s_norm = (z - z_k).norm();
    if (s_norm <= radius) {
      const double dm = model.decrease_from_center(z);
      if (dm <= -(params.mu_cauchy / t) * s_norm * s_norm) {
        out.z = std::move(z);
        out.t = t;
        out.model_change = dm;
        out.backtracks = i;
        return out;
      }
    }
    if (i >= params.max_backtracks)
      throw Error("cauchy_point: no acceptable step length; model and gradient are inconsistent");
    t *= 0.5;
  }
}

SubproblemResult solve_subproblem(const Model& model, double delta, const CauchyResult& cauchy,
                                  double psi, const TrParams& params) {
  const CellField& z_k = model.center();
  const ModelHessian& B = model.hessian();
  const ProxFunction& phi = model.phi();
  const double radius = params.kappa_rad * delta;

  CellField z = cauchy.z;
  CellField grad = model.gradient() + B.apply(z - z_k);
  double alpha = std::clamp(cauchy.t, kAlphaMin, kAlphaMax);
  double phi_z = prox::phi_value(phi, z);
  const double stop = params.subproblem_rel_tol * psi;

  SubproblemResult out;
  for (int it = 0; it < params.subproblem_max_iter; ++it) {
    // Stationarity of the model measured with the fixed Cauchy step length.
    const double t_ref = cauchy.t;
    if ((prox::prox_apply(phi, z - t_ref * grad, t_ref) - z).norm() / t_ref <= stop) break;
    const CellField y = prox::prox_apply(phi, z - alpha * grad, alpha);
    const CellField d = y - z;
    const double d_norm = d.norm();
    if (d_norm == 0.0) break;

    // Largest lambda with ||z + lambda d - z_k|| <= radius.
    const CellField w = z - z_k;
    const double a = d_norm * d_norm, b = 2.0 * w.dot(d), c = w.dot(w) - radius * radius;
    const double root = std::sqrt(std::max(b * b - 4.0 * a * c, 0.0));
    double lambda = std::min(1.0, b > 0.0 ? -2.0 * c / (b + root) : (root - b) / (2.0 * a));
    if (!(lambda > 0.0)) break;

    const CellField Bd = B.apply(d);
    const double gd = grad.dot(d), dBd = Bd.dot(d);
    double change = 0.0, phi_new = phi_z;
    bool improved = false;
    for (int h = 0; h < kLineHalvings; ++h) {
      const CellField trial = z + lambda * d;
      phi_new = prox::phi_value(phi, trial);
      change = lambda * gd + 0.5 * lambda * lambda * dBd + phi_new - phi_z;
      if (change < 0.0 && (trial - z_k).norm() <= radius) {
        improved = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!improved) break;

    z = z + lambda * d;
    grad = grad + lambda * Bd;
    phi_z = phi_new;
    out.iterations = it + 1;

    const double sy = lambda * lambda * dBd;
    const double ss = lambda * lambda * a;
    alpha = sy > 0.0 ? std::clamp(ss / sy, kAlphaMin, kAlphaMax) : kAlphaMax;
  }
  // Recompute from scratch to avoid drift in the accumulated change.
  out.pred = -model.decrease_from_center(z);
  out.z = std::move(z);
  return out;
}

double value_tolerance(double pred, double eps, const TrParams& params) {
  if (!(pred > 0.0)) throw Error("value_tolerance: predicted reduction must be positive");
  return params.kappa_val * std::pow(params.gamma * std::min(pred, eps), 1.0 / params.j);
}

DerivativeResult derivative_loop(Oracle& oracle, CellField& z, double delta, double t,
                                 const ProxFunction& phi, const TrParams& params) {
  DerivativeResult out;
  double tau = params.kappa_der * delta;
  out.xi = std::numeric_limits<double>::infinity();
  while (out.xi > tau) {
    GradientEval ge = oracle.gradient(z, tau, params.tau_max_der);
    z = oracle.transfer(z);
    ++out.passes;
    out.g = oracle.transfer(ge.g);
    out.xi = ge.xi;
    out.tau = tau;
    out.psi = stationarity(z, out.g, t, phi);
    tau = params.kappa_der * std::min(out.psi, delta);
    if (out.xi <= tau) break;
    if (ge.degraded || out.passes >= params.max_derivative_passes) {
      out.degraded = true;
      break;
    }
  }
  return out;
}

RadiusUpdate accept_and_update(double rho, double delta, const TrParams& params) {
  if (!(rho >= params.eta1)) return {false, params.gamma1 * delta};
  if (rho < params.eta2) return {true, params.gamma2 * delta};
  return {true, params.gamma3 * delta};
}

double estimate_norm(const ModelHessian& hessian, const mesh::MeshPtr& mesh, int iterations) {
  if (hessian.is_zero()) return 0.0;
  const auto n = static_cast<Eigen::Index>(mesh->cell_count());
  CellField v(mesh, Eigen::VectorXd::LinSpaced(n, 1.0, 2.0));
  double est = 0.0;
  for (int i = 0; i < iterations; ++i) {
    const double nv = v.norm();
    if (nv == 0.0) return 0.0;
    v = (1.0 / nv) * v;
    CellField w = hessian.apply(v);
    est = w.norm();
    v = std::move(w);
  }
  return est;
}

RunResult run(Oracle& oracle, const ProxFunction& phi, CellField z0, const TrParams& params,
              const Observer& observer) {
  params.validate();
  CellField z = oracle.transfer(z0);
  if (!std::isfinite(prox::phi_value(phi, z))) throw Error("initial iterate is outside the domain of phi");

  RunResult result;
  double delta = params.delta0;
  double t_prev = 1.0;
  bool have_f = false;
  double f_current = 0.0;
  LbfgsHessian lbfgs(params.lbfgs_memory);
  bool pending_pair = false;
  CellField z_prev, g_prev;

  for (int k = 0;; ++k) {
    DerivativeResult der = derivative_loop(oracle, z, delta, t_prev, phi, params);

    IterationRecord rec;
    rec.k = k;
    rec.psi = der.psi;
    rec.delta = delta;
    rec.tau_der = der.tau;
    rec.xi = der.xi;
    rec.t = t_prev;
    rec.derivative_passes = der.passes;
    rec.degraded = der.degraded;

    if (params.hessian == HessianKind::Lbfgs) {
      lbfgs.transfer(oracle);
      if (pending_pair) {
        lbfgs.update(z - oracle.transfer(z_prev), der.g - oracle.transfer(g_prev));
        pending_pair = false;
      }
    }

    const bool converged = der.psi <= params.psi_tol;
    if (converged || k >= params.max_iter) {
      if (!have_f) {
        const ValuePair vp = oracle.value_pair(z, z, params.tau_max_val, params.tau_max_val);
        z = oracle.transfer(z);
        f_current = vp.f + prox::phi_value(phi, z);
      }
      rec.dofs = oracle.dof_count();
      rec.f = f_current;
      rec.f_plus = f_current;
      rec.final = true;
      result.status = converged ? RunStatus::Converged : RunStatus::IterationLimit;
      result.history.push_back(rec);
      if (observer) observer(rec, z);
      result.z = z;
      result.psi = der.psi;
      result.f = f_current;
      return result;
    }

    std::unique_ptr<ModelHessian> B;
    switch (params.hessian) {
      case HessianKind::Zero:
        B = std::make_unique<ZeroHessian>();
        break;
      case HessianKind::Exact:
        B = std::make_unique<OracleHessian>(oracle, z);
        break;
      case HessianKind::Lbfgs:
        B = std::make_unique<LbfgsHessian>(lbfgs);
        break;
    }

    const Model model(z, der.g, *B, phi);
    const double t0 = std::clamp(t_prev, 1e-8, 1e8);
    const CauchyResult cp = cauchy_point(model, delta, t0, params);
    SubproblemResult sub = solve_subproblem(model, delta, cp, der.psi, params);
    rec.pred = sub.pred;
    rec.subproblem_iterations = sub.iterations;
    rec.step_norm = (sub.z - z).norm();
    if (params.certify) rec.hessian_norm = estimate_norm(*B, z.mesh);
    if (der.psi > 0.0)
      rec.kappa_fcd = sub.pred / (der.psi * std::min(delta, der.psi / (1.0 + rec.hessian_norm)));

    if (!(sub.pred > 0.0)) {
      // No model decrease is available; shrink the region.
      if (!have_f) {
        const ValuePair vp = oracle.value_pair(z, z, params.tau_max_val, params.tau_max_val);
        z = oracle.transfer(z);
        f_current = vp.f + prox::phi_value(phi, z);
        have_f = true;
      }
      rec.dofs = oracle.dof_count();
      rec.f = rec.f_plus = f_current;
      rec.accepted = false;
      result.history.push_back(rec);
      if (observer) observer(rec, z);
      delta *= params.gamma1;
      t_prev = cp.t;
      continue;
    }

    const double tau_val = value_tolerance(sub.pred, params.epsilon(k), params);
    const ValuePair vp = oracle.value_pair(z, sub.z, tau_val, params.tau_max_val);
    z = oracle.transfer(z);
    CellField z_plus = oracle.transfer(sub.z);
    CellField g = oracle.transfer(der.g);
    const double f = vp.f + prox::phi_value(phi, z);
    const double f_plus = vp.f_plus + prox::phi_value(phi, z_plus);
    const double cred = f - f_plus;
    const double rho = cred / sub.pred;
    const RadiusUpdate upd = accept_and_update(rho, delta, params);

    rec.dofs = oracle.dof_count();
    rec.f = f;
    rec.f_plus = f_plus;
    rec.cred = cred;
    rec.rho = rho;
    rec.accepted = upd.accepted;
    rec.tau_val = tau_val;
    rec.degraded = rec.degraded || vp.degraded;
    result.history.push_back(rec);
    if (observer) observer(rec, z);

    if (upd.accepted) {
      z_prev = z;
      g_prev = g;
      pending_pair = true;
      z = std::move(z_plus);
      f_current = f_plus;
    } else {
      f_current = f;
    }
    have_f = true;
    delta = upd.delta;
    t_prev = cp.t;
  }
}

void write_history_csv(std::ostream& os, const std::vector<IterationRecord>& history) {
  os << "k,dofs,F,psi,delta,rho,pred,cred,accepted,tau_val,tau_der,xi\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : history) {
    os << r.k << ',' << r.dofs << ',' << num(r.f) << ',' << num(r.psi) << ',' << num(r.delta) << ','
       << num(r.rho) << ',' << num(r.pred) << ',' << num(r.cred) << ',' << (r.accepted ? 1 : 0) << ','
       << num(r.tau_val) << ',' << num(r.tau_der) << ',' << num(r.xi) << '\n';
  }
}

}  // namespace afemtr::tr
