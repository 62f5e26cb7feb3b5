#include "afemtr/prox.hpp"

#include <cmath>
#include <limits>

namespace afemtr::prox {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr int kMaxBisections = 200;
constexpr double kVolumeTol = 1e-12;

}  // namespace

void validate(const ProxFunction& phi, double domain_area) {
  std::visit(overloaded{
                 [](const Zero&) {},
                 [](const L1& p) {
                   if (!(p.beta >= 0.0)) throw Error("L1 weight must be nonnegative");
                 },
                 [domain_area](const BoxVolume& p) {
                   if (!(p.lo <= p.hi)) throw Error("BoxVolume requires lo <= hi");
                   if (p.volume < p.lo * domain_area - kFeasibilityTol ||
                       p.volume > p.hi * domain_area + kFeasibilityTol)
                     throw Error("BoxVolume target volume is unreachable within the bounds");
                 },
             },
             phi);
}

double phi_value(const ProxFunction& phi, const CellField& z) {
  return std::visit(
      overloaded{
          [](const Zero&) { return 0.0; },
          [&z](const L1& p) { return p.beta * z.areas().dot(z.values.cwiseAbs()); },
          [&z](const BoxVolume& p) {
            if (z.values.minCoeff() < p.lo - kFeasibilityTol || z.values.maxCoeff() > p.hi + kFeasibilityTol ||
                std::abs(z.integral() - p.volume) > kFeasibilityTol)
              return std::numeric_limits<double>::infinity();
            return 0.0;
          },
      },
      phi);
}

CellField project_box_volume(const BoxVolume& set, const CellField& z, ProjectionInfo* info) {
  const auto& a = z.areas();
  auto volume_at = [&](double mu) {
    return a.dot((z.values.array() - mu).cwiseMax(set.lo).cwiseMin(set.hi).matrix());
  };
  // The volume is nonincreasing in mu; these bounds give all-hi and all-lo.
  double mu_lo = z.values.minCoeff() - set.hi - 1.0;
  double mu_hi = z.values.maxCoeff() - set.lo + 1.0;
  double mu = 0.5 * (mu_lo + mu_hi);
  int it = 0;
  for (;; ++it) {
    if (it >= kMaxBisections) throw Error("BoxVolume projection: bisection did not converge");
    mu = 0.5 * (mu_lo + mu_hi);
    const double v = volume_at(mu);
    if (std::abs(v - set.volume) <= kVolumeTol) break;
    if (v > set.volume)
      mu_lo = mu;
    else
      mu_hi = mu;
  }
  // Exact multiplier on the identified free set.
  double free_area = 0.0, fixed = 0.0, free_sum = 0.0;
  for (Eigen::Index i = 0; i < z.values.size(); ++i) {
    const double y = z.values[i] - mu;
    if (y <= set.lo)
      fixed += a[i] * set.lo;
    else if (y >= set.hi)
      fixed += a[i] * set.hi;
    else {
      free_area += a[i];
      free_sum += a[i] * z.values[i];
    }
  }
  if (free_area > 0.0) {
    const double polished = (free_sum + fixed - set.volume) / free_area;
    if (std::abs(volume_at(polished) - set.volume) <= std::abs(volume_at(mu) - set.volume)) mu = polished;
  }
  if (info) *info = {mu, it};
  return {z.mesh, Eigen::VectorXd((z.values.array() - mu).cwiseMax(set.lo).cwiseMin(set.hi).matrix())};
}

CellField prox_apply(const ProxFunction& phi, const CellField& z, double r) {
  if (!(r > 0.0)) throw Error("prox_apply: step must be positive");
  return std::visit(
      overloaded{
          [&z](const Zero&) { return z; },
          [&z, r](const L1& p) {
            const double t = r * p.beta;
            Eigen::VectorXd y = z.values.unaryExpr([t](double v) {
              const double mag = std::abs(v) - t;
              return mag > 0.0 ? std::copysign(mag, v) : 0.0;
            });
            return CellField(z.mesh, std::move(y));
          },
          [&z](const BoxVolume& p) { return project_box_volume(p, z); },
      },
      phi);
}

}  // namespace afemtr::prox
