#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "afemtr/mesh.hpp"
#include "afemtr/prox.hpp"

namespace afemtr::tr {

using mesh::CellField;
using prox::ProxFunction;

enum class HessianKind { Zero, Exact, Lbfgs };

/// Trust-region constants. Defaults are the settings used for the AFEM
/// experiments (gamma2 = 1 deliberately sits on the boundary of its range).
struct TrParams {
  double delta0 = 50.0;
  double eta1 = 0.05;
  double eta2 = 0.9;
  double gamma1 = 0.25;
  double gamma2 = 1.0;
  double gamma3 = 2.5;
  double theta = 0.05;  ///< Dörfler fraction handed to the oracles
  double kappa_val = 1e6;
  double kappa_der = 1e6;
  double tau_max_val = 1.0;
  double tau_max_der = 1.0;
  double gamma = 1.0 - 1e-3;
  double eps0 = 1.0 - 1e-3;
  double eps_decay = 1.0;  ///< eps_k = eps0 * eps_decay^k
  double j = 0.9;
  double psi_tol = 1e-6;
  int max_iter = 500;
  double kappa_rad = 1.0;
  double mu_cauchy = 1e-4;
  int max_backtracks = 60;
  int subproblem_max_iter = 50;
  double subproblem_rel_tol = 1e-2;
  int max_derivative_passes = 100;
  HessianKind hessian = HessianKind::Zero;
  int lbfgs_memory = 10;
  bool certify = true;  ///< estimate ||B_k|| for the decrease certificate

  /// Throws on violated hard invariants; returns warnings for the soft ones
  /// (gamma2 < 1, gamma < min(eta1, 1 - eta2)).
  std::vector<std::string> validate() const;
  double epsilon(int k) const;
};

struct GradientEval {
  CellField g;      ///< Riesz representative in the area-weighted L2 product
  double xi = 0.0;  ///< total error estimate of the derivative
  bool degraded = false;
};

struct ValuePair {
  double f = 0.0;       ///< smooth objective at z
  double f_plus = 0.0;  ///< smooth objective at the trial point, same discretization
  bool degraded = false;
};

/// Inexact objective/derivative provider. The oracle may refine its
/// discretization during any call; transfer() maps older fields onto the
/// current one.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual GradientEval gradient(const CellField& z, double tau, double tau_max) = 0;
  virtual ValuePair value_pair(const CellField& z, const CellField& z_plus, double tau,
                               double tau_max) = 0;
  virtual bool has_hessian() const { return false; }
  virtual CellField hessian_apply(const CellField& z, const CellField& v);
  virtual mesh::MeshPtr current_mesh() const = 0;
  virtual std::size_t dof_count() const = 0;
  virtual CellField transfer(const CellField& field) const {
    return mesh::prolong_cellfield(field, current_mesh());
  }
};

/// Self-adjoint model curvature B_k.
class ModelHessian {
 public:
  virtual ~ModelHessian() = default;
  virtual CellField apply(const CellField& v) const = 0;
  virtual bool is_zero() const { return false; }
};

class ZeroHessian final : public ModelHessian {
 public:
  CellField apply(const CellField& v) const override { return CellField(v.mesh, 0.0); }
  bool is_zero() const override { return true; }
};

class OracleHessian final : public ModelHessian {
 public:
  OracleHessian(Oracle& oracle, CellField z) : oracle_(oracle), z_(std::move(z)) {}
  CellField apply(const CellField& v) const override { return oracle_.hessian_apply(z_, v); }

 private:
  Oracle& oracle_;
  CellField z_;
};

/// Limited-memory BFGS matrix applied through its unrolled product form.
class LbfgsHessian final : public ModelHessian {
 public:
  explicit LbfgsHessian(int memory) : memory_(memory) {}
  /// Stores the pair unless its curvature s'y/s's is at most 1e-12.
  bool update(const CellField& s, const CellField& y);
  /// Moves the stored pairs onto a refined mesh.
  void transfer(const Oracle& oracle);
  CellField apply(const CellField& v) const override;
  bool is_zero() const override { return false; }
  std::size_t size() const { return s_.size(); }

 private:
  void rebuild();
  int memory_;
  double sigma_ = 1.0;
  std::vector<CellField> s_, y_, bs_;
};

/// Psi(z, t) = ||prox_{t phi}(z - t g) - z|| / t.
double stationarity(const CellField& z, const CellField& g, double t, const ProxFunction& phi);

/// m_k(z) - m_k(z_k) for m_k(z) = <g, z - z_k> + 1/2 <B(z - z_k), z - z_k> + phi(z).
class Model {
 public:
  Model(const CellField& z_k, const CellField& g, const ModelHessian& hessian, const ProxFunction& phi);
  double decrease_from_center(const CellField& z) const;
  const CellField& center() const { return z_k_; }
  const CellField& gradient() const { return g_; }
  const ModelHessian& hessian() const { return hessian_; }
  const ProxFunction& phi() const { return phi_; }
  double phi_center() const { return phi_k_; }

 private:
  const CellField& z_k_;
  const CellField& g_;
  const ModelHessian& hessian_;
  ProxFunction phi_;
  double phi_k_;
};

struct CauchyResult {
  CellField z;
  double t = 1.0;
  double model_change = 0.0;  ///< m(z_c) - m(z_k), negative
  int backtracks = 0;
};

/// Backtracking t = t0 / 2^i until ||s(t)|| <= kappa_rad Delta and
/// m(z_k + s(t)) - m(z_k) <= -(mu_c / t) ||s(t)||^2.
CauchyResult cauchy_point(const Model& model, double delta, double t0, const TrParams& params);

struct SubproblemResult {
  CellField z;
  double pred = 0.0;  ///< m(z_k) - m(z_plus)
  int iterations = 0;
};

/// Spectral projected-gradient iterations started from the Cauchy point,
/// kept inside the trust region and monotone in the model.
SubproblemResult solve_subproblem(const Model& model, double delta, const CauchyResult& cauchy,
                                  double psi, const TrParams& params);

/// kappa_val * (gamma * min(pred, eps))^(1/j).
double value_tolerance(double pred, double eps, const TrParams& params);

struct DerivativeResult {
  CellField g;
  double psi = 0.0;
  double xi = 0.0;
  double tau = 0.0;  ///< tolerance of the final gradient request
  int passes = 0;
  bool degraded = false;
};

/// Requests gradients with tau = kappa_der * min(Psi, Delta) until the
/// returned estimate meets it. `z` is moved onto the oracle's mesh.
DerivativeResult derivative_loop(Oracle& oracle, CellField& z, double delta, double t,
                                 const ProxFunction& phi, const TrParams& params);

struct RadiusUpdate {
  bool accepted = false;
  double delta = 0.0;
};

RadiusUpdate accept_and_update(double rho, double delta, const TrParams& params);

/// Power-iteration estimate of ||B|| in the weighted L2 norm.
double estimate_norm(const ModelHessian& hessian, const mesh::MeshPtr& mesh, int iterations = 20);

struct IterationRecord {
  int k = 0;
  std::size_t dofs = 0;
  double f = 0.0;  ///< computed F_k(z_k)
  double f_plus = 0.0;
  double psi = 0.0;
  double delta = 0.0;
  double rho = 0.0;
  double pred = 0.0;
  double cred = 0.0;
  bool accepted = false;
  double tau_val = 0.0;
  double tau_der = 0.0;
  double xi = 0.0;
  double step_norm = 0.0;
  double t = 0.0;
  double hessian_norm = 0.0;
  /// pred / (Psi min(Delta, Psi / (1 + ||B||))); the constant of the
  /// fraction-of-Cauchy-decrease inequality realized at this iteration.
  double kappa_fcd = 0.0;
  int derivative_passes = 0;
  int subproblem_iterations = 0;
  bool degraded = false;
  bool final = false;  ///< stopping record; no step was computed
};

enum class RunStatus { Converged, IterationLimit };

struct RunResult {
  RunStatus status = RunStatus::IterationLimit;
  std::vector<IterationRecord> history;
  CellField z;
  double psi = 0.0;
  double f = 0.0;
};

using Observer = std::function<void(const IterationRecord&, const CellField& z)>;

/// Trust-region loop with inexact AFEM values and derivatives.
RunResult run(Oracle& oracle, const ProxFunction& phi, CellField z0, const TrParams& params,
              const Observer& observer = {});

/// CSV with header k,dofs,F,psi,delta,rho,pred,cred,accepted,tau_val,tau_der,xi.
void write_history_csv(std::ostream& os, const std::vector<IterationRecord>& history);

}  // namespace afemtr::tr
