#pragma once

#include "geoprox/hilbert.hpp"

#include <limits>
#include <string>
#include <vector>

namespace geoprox {

enum class ProxKind { Zero, Box, L1, Quadratic, Reaction };

/// A member of the supported catalog of proper convex lsc functions.
///
/// Box, L1 and Reaction act pointwise: coordinatewise on the standard basis and
/// on function values over the Hermite basis. Quadratic(c) = (c/2)||x||^2 acts
/// directly in coefficient space.
struct ProxFn {
  ProxKind kind = ProxKind::Zero;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  double weight = 1.0;  // L1
  double c = 1.0;       // Quadratic
  // Reaction only: use the closed form x - min(x, 0)/4 as printed for
  // Q(s) = 1{s<0} s^2/4 instead of the resolvent solve. Kept for comparison.
  bool stated_form = false;

  static ProxFn zero() { return {}; }
  static ProxFn box(double lo, double hi);
  static ProxFn l1(double weight);
  static ProxFn quadratic(double c);
  static ProxFn reaction(bool stated_form = false);

  bool pointwise() const { return kind == ProxKind::Box || kind == ProxKind::L1 || kind == ProxKind::Reaction; }
  std::string name() const;
};

/// Scalar building blocks, applied per coordinate or per quadrature node.
double prox_scalar(const ProxFn& f, double tau, double u);
/// Derivative of prox_scalar with the fixed convention at kinks: clamp
/// boundaries count as interior, soft-threshold at the threshold is 0,
/// reaction at 0 is 1.
double prox_scalar_derivative(const ProxFn& f, double tau, double u);
/// Pre-activation values where prox_scalar is not differentiable.
std::vector<double> prox_kinks(const ProxFn& f, double tau);
/// f evaluated on one coordinate (Quadratic: (c/2) u^2). May be +inf.
double fn_scalar(const ProxFn& f, double u);

/// prox_{tau f} on raw coefficients of rank x.size() in `basis`.
Eigen::VectorXd prox_apply(const ProxFn& f, double tau, const Basis& basis, const Eigen::VectorXd& x);
/// J^T v for the Jacobian J of prox_apply at x (J is symmetric for the catalog).
Eigen::VectorXd prox_vjp(const ProxFn& f, double tau, const Basis& basis, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& v);

CoeffVec prox_eval(const ProxFn& f, double tau, const CoeffVec& x);

/// Grid search over [x_i - B, x_i + B] at `resolution`, then ternary refinement
/// around the best grid point. Independent of the closed forms above.
CoeffVec prox_bruteforce(const ProxFn& f, double tau, const CoeffVec& x, double resolution);
double prox_bruteforce_scalar(const ProxFn& f, double tau, double u, double resolution);

/// sigma_f = P_R o prox_{tau f}, zero-padded to the rank of x.
CoeffVec sigma_f(const ProxFn& f, double tau, const CoeffVec& x, int rank);

/// f(x); +inf for indicator violations; pointwise integrals by quadrature on
/// the Hermite basis.
double fn_value(const ProxFn& f, const CoeffVec& x);
double fn_value(const ProxFn& f, const Basis& basis, const Eigen::VectorXd& x);

}  // namespace geoprox
