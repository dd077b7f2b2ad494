#include "geoprox/prox.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace geoprox {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_tau(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("prox: tau must be positive");
}

// Scaled objective tau*f(s) + (s-u)^2/2 for the brute-force search.
double scalar_objective(const ProxFn& f, double tau, double u, double s) {
  const double fs = fn_scalar(f, s);
  if (std::isinf(fs)) return kInf;
  return tau * fs + 0.5 * (s - u) * (s - u);
}

// Half-width B = 1 + |u| + tau * slope bound, widened to reach a finite box.
double bracket_halfwidth(const ProxFn& f, double tau, double u) {
  double slope = 0.0;
  double extent = 0.0;
  switch (f.kind) {
    case ProxKind::L1:
      slope = f.weight;
      break;
    case ProxKind::Box:
      if (std::isfinite(f.lo)) extent = std::max(extent, std::abs(f.lo));
      if (std::isfinite(f.hi)) extent = std::max(extent, std::abs(f.hi));
      break;
    default:
      break;
  }
  return 1.0 + std::abs(u) + tau * slope + extent;
}

}  // namespace

ProxFn ProxFn::box(double lo, double hi) {
  if (std::isnan(lo) || std::isnan(hi) || !(lo < hi)) throw std::invalid_argument("box: need lo < hi");
  ProxFn f;
  f.kind = ProxKind::Box;
  f.lo = lo;
  f.hi = hi;
  return f;
}

ProxFn ProxFn::l1(double weight) {
  if (!(weight > 0.0)) throw std::invalid_argument("l1: weight must be positive");
  ProxFn f;
  f.kind = ProxKind::L1;
  f.weight = weight;
  return f;
}

ProxFn ProxFn::quadratic(double c) {
  if (!(c > 0.0)) throw std::invalid_argument("quadratic: c must be positive");
  ProxFn f;
  f.kind = ProxKind::Quadratic;
  f.c = c;
  return f;
}

ProxFn ProxFn::reaction(bool stated_form) {
  ProxFn f;
  f.kind = ProxKind::Reaction;
  f.stated_form = stated_form;
  return f;
}

std::string ProxFn::name() const {
  std::ostringstream os;
  switch (kind) {
    case ProxKind::Zero:
      os << "zero";
      break;
    case ProxKind::Box:
      os << "box[" << lo << "," << hi << "]";
      break;
    case ProxKind::L1:
      os << "l1(" << weight << ")";
      break;
    case ProxKind::Quadratic:
      os << "quadratic(" << c << ")";
      break;
    case ProxKind::Reaction:
      os << (stated_form ? "reaction-stated" : "reaction");
      break;
  }
  return os.str();
}

double prox_scalar(const ProxFn& f, double tau, double u) {
  switch (f.kind) {
    case ProxKind::Zero:
      return u;
    case ProxKind::Box:
      return std::clamp(u, f.lo, f.hi);
    case ProxKind::L1: {
      const double t = tau * f.weight;
      if (u > t) return u - t;
      if (u < -t) return u + t;
      return 0.0;
    }
    case ProxKind::Quadratic:
      return u / (1.0 + tau * f.c);
    case ProxKind::Reaction:
      if (u >= 0.0) return u;
      return f.stated_form ? u - 0.25 * u : u / (1.0 + 0.5 * tau);
  }
  return u;
}

double prox_scalar_derivative(const ProxFn& f, double tau, double u) {
  switch (f.kind) {
    case ProxKind::Zero:
      return 1.0;
    case ProxKind::Box:
      return (u >= f.lo && u <= f.hi) ? 1.0 : 0.0;
    case ProxKind::L1:
      return std::abs(u) > tau * f.weight ? 1.0 : 0.0;
    case ProxKind::Quadratic:
      return 1.0 / (1.0 + tau * f.c);
    case ProxKind::Reaction:
      if (u >= 0.0) return 1.0;
      return f.stated_form ? 0.75 : 1.0 / (1.0 + 0.5 * tau);
  }
  return 1.0;
}

std::vector<double> prox_kinks(const ProxFn& f, double tau) {
  switch (f.kind) {
    case ProxKind::Box: {
      std::vector<double> k;
      if (std::isfinite(f.lo)) k.push_back(f.lo);
      if (std::isfinite(f.hi)) k.push_back(f.hi);
      return k;
    }
    case ProxKind::L1:
      return {-tau * f.weight, tau * f.weight};
    case ProxKind::Reaction:
      return {0.0};
    default:
      return {};
  }
}

double fn_scalar(const ProxFn& f, double u) {
  switch (f.kind) {
    case ProxKind::Zero:
      return 0.0;
    case ProxKind::Box:
      return (u >= f.lo && u <= f.hi) ? 0.0 : kInf;
    case ProxKind::L1:
      return f.weight * std::abs(u);
    case ProxKind::Quadratic:
      return 0.5 * f.c * u * u;
    case ProxKind::Reaction:
      return u < 0.0 ? 0.25 * u * u : 0.0;
  }
  return 0.0;
}

Eigen::VectorXd prox_apply(const ProxFn& f, double tau, const Basis& basis, const Eigen::VectorXd& x) {
  require_tau(tau);
  if (f.kind == ProxKind::Zero) return x;
  if (f.kind == ProxKind::Quadratic) return x / (1.0 + tau * f.c);
  if (basis.is_hermite()) {
    Eigen::VectorXd values = lift_to_nodes(basis, x);
    for (auto& v : values) v = prox_scalar(f, tau, v);
    return encode_from_nodes(basis, values, static_cast<int>(x.size()));
  }
  Eigen::VectorXd y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = prox_scalar(f, tau, x[i]);
  return y;
}

Eigen::VectorXd prox_vjp(const ProxFn& f, double tau, const Basis& basis, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& v) {
  if (f.kind == ProxKind::Zero) return v;
  if (f.kind == ProxKind::Quadratic) return v / (1.0 + tau * f.c);
  if (basis.is_hermite()) {
    // J = Phi^T W diag(p'(Phi x)) Phi, symmetric.
    const Eigen::VectorXd values = lift_to_nodes(basis, x);
    Eigen::VectorXd lifted = lift_to_nodes(basis, v);
    for (Eigen::Index i = 0; i < lifted.size(); ++i) lifted[i] *= prox_scalar_derivative(f, tau, values[i]);
    return encode_from_nodes(basis, lifted, static_cast<int>(x.size()));
  }
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = v[i] * prox_scalar_derivative(f, tau, x[i]);
  return out;
}

CoeffVec prox_eval(const ProxFn& f, double tau, const CoeffVec& x) {
  return CoeffVec(x.basis_ptr(), prox_apply(f, tau, x.basis(), x.coeffs()));
}

double prox_bruteforce_scalar(const ProxFn& f, double tau, double u, double resolution) {
  require_tau(tau);
  if (!(resolution > 0.0)) throw std::invalid_argument("prox_bruteforce: resolution must be positive");
  const double half = bracket_halfwidth(f, tau, u);
  const double lo = u - half;
  const auto steps = static_cast<long>(std::ceil(2.0 * half / resolution));
  long best = 0;
  double best_val = kInf;
  for (long k = 0; k <= steps; ++k) {
    const double s = lo + k * resolution;
    const double val = scalar_objective(f, tau, u, s);
    if (val < best_val) {
      best_val = val;
      best = k;
    }
  }
  // Ternary refinement on the cell around the best grid point; infeasible
  // ends of the cell are pulled in by the comparison.
  double a = lo + (best - 1) * resolution;
  double b = lo + (best + 1) * resolution;
  for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(a)); ++it) {
    const double m1 = a + (b - a) / 3.0;
    const double m2 = b - (b - a) / 3.0;
    if (scalar_objective(f, tau, u, m1) <= scalar_objective(f, tau, u, m2)) {
      b = m2;
    } else {
      a = m1;
    }
  }
  const double refined = 0.5 * (a + b);
  const double grid_point = lo + best * resolution;
  return scalar_objective(f, tau, u, refined) <= best_val ? refined : grid_point;
}

CoeffVec prox_bruteforce(const ProxFn& f, double tau, const CoeffVec& x, double resolution) {
  const Basis& basis = x.basis();
  if (basis.is_hermite() && f.pointwise()) {
    Eigen::VectorXd values = lift_to_nodes(basis, x.coeffs());
    for (auto& v : values) v = prox_bruteforce_scalar(f, tau, v, resolution);
    return CoeffVec(x.basis_ptr(), encode_from_nodes(basis, values, x.rank()));
  }
  Eigen::VectorXd y(x.rank());
  for (int i = 0; i < x.rank(); ++i) y[i] = prox_bruteforce_scalar(f, tau, x[i], resolution);
  return CoeffVec(x.basis_ptr(), std::move(y));
}

CoeffVec sigma_f(const ProxFn& f, double tau, const CoeffVec& x, int rank) {
  return project_padded(prox_eval(f, tau, x), rank);
}

double fn_value(const ProxFn& f, const Basis& basis, const Eigen::VectorXd& x) {
  switch (f.kind) {
    case ProxKind::Zero:
      return 0.0;
    case ProxKind::Quadratic:
      return 0.5 * f.c * x.squaredNorm();
    default:
      break;
  }
  if (basis.is_hermite()) {
    const Eigen::VectorXd values = lift_to_nodes(basis, x);
    double total = 0.0;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      const double v = fn_scalar(f, values[i]);
      if (std::isinf(v)) return kInf;
      total += basis.weights()[i] * v;
    }
    return total;
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = fn_scalar(f, x[i]);
    if (std::isinf(v)) return kInf;
    total += v;
  }
  return total;
}

double fn_value(const ProxFn& f, const CoeffVec& x) { return fn_value(f, x.basis(), x.coeffs()); }

}  // namespace geoprox
