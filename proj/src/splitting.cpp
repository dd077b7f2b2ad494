#include "geoprox/splitting.hpp"

#include "geoprox/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace geoprox {

namespace {

constexpr double kMinLipschitz = 1e-12;
constexpr double kDivergenceNorm = 1e12;

void check_gradient(int dim, const ObjectiveG::Value& value, const ObjectiveG::Gradient& gradient,
                    std::uint64_t seed) {
  RngStream rng(seed);
  constexpr double h = 1e-6;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd x(dim);
    for (auto& v : x) v = rng.normal();
    const Eigen::VectorXd an = gradient(x);
    if (an.size() != dim) throw std::invalid_argument("ObjectiveG: gradient has wrong dimension");
    Eigen::VectorXd fd(dim);
    for (int i = 0; i < dim; ++i) {
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fd[i] = (value(xp) - value(xm)) / (2 * h);
    }
    const double scale = std::max({an.norm(), fd.norm(), 1e-6});
    if ((an - fd).norm() / scale >= 1e-4) {
      throw std::invalid_argument("ObjectiveG: analytic gradient fails the finite-difference check");
    }
  }
}

Eigen::VectorXd step_point(const Eigen::VectorXd& x, const Eigen::VectorXd& grad, double lam) {
  return x - lam * grad;
}

/// Largest a' <= a with 1 - (1 - a') == a', so a gate stored as gamma = 1 - a
/// reproduces a bit for bit. Below 2^-53 no such positive value exists.
double exact_complement(double a) {
  if (a < 0x1.0p-53) return a;
  double gamma = 1.0 - a;
  if (1.0 - gamma > a) gamma = std::nextafter(gamma, 2.0);
  return 1.0 - gamma;
}

}  // namespace

ObjectiveG::ObjectiveG(int dim, Value value, std::optional<Gradient> gradient, double lipschitz,
                       std::uint64_t check_seed)
    : dim_(dim), value_(std::move(value)), gradient_(std::move(gradient)) {
  if (dim < 1) throw std::invalid_argument("ObjectiveG: dimension must be positive");
  if (!value_) throw std::invalid_argument("ObjectiveG: missing evaluator");
  if (!(lipschitz >= 0.0)) throw std::invalid_argument("ObjectiveG: lipschitz bound must be nonnegative");
  lipschitz_ = std::max(lipschitz, kMinLipschitz);
  if (gradient_) check_gradient(dim, value_, *gradient_, check_seed);
}

double ObjectiveG::value(const CoeffVec& x) const {
  if (x.rank() != dim_) throw std::invalid_argument("ObjectiveG: dimension mismatch");
  return value_(x.coeffs());
}

Eigen::VectorXd ObjectiveG::gradient(const Eigen::VectorXd& x) const {
  if (!gradient_) throw std::logic_error("ObjectiveG: no analytic gradient");
  return (*gradient_)(x);
}

ObjectiveG ObjectiveG::restricted(int rank) const {
  if (rank < 1 || rank > dim_) throw std::invalid_argument("ObjectiveG::restricted: rank out of range");
  ObjectiveG out;
  out.dim_ = rank;
  out.lipschitz_ = lipschitz_;
  const int full = dim_;
  auto value = value_;
  out.value_ = [value, full, rank](const Eigen::VectorXd& z) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(full);
    x.head(rank) = z;
    return value(x);
  };
  if (gradient_) {
    auto gradient = *gradient_;
    out.gradient_ = [gradient, full, rank](const Eigen::VectorXd& z) -> Eigen::VectorXd {
      Eigen::VectorXd x = Eigen::VectorXd::Zero(full);
      x.head(rank) = z;
      return gradient(x).head(rank);
    };
  }
  return out;
}

ObjectiveG quadratic_objective(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double c) {
  if (a.rows() != a.cols() || a.rows() != b.size()) throw std::invalid_argument("quadratic: shape mismatch");
  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("quadratic: matrix must be positive semidefinite");
  }
  const double lip = eig.eigenvalues().maxCoeff();
  return ObjectiveG(
      static_cast<int>(b.size()),
      [sym, b, c](const Eigen::VectorXd& x) { return 0.5 * x.dot(sym * x) + b.dot(x) + c; },
      [sym, b](const Eigen::VectorXd& x) -> Eigen::VectorXd { return sym * x + b; }, lip);
}

ObjectiveG separable_quadratic(const Eigen::VectorXd& a, const Eigen::VectorXd& center) {
  if (a.size() != center.size()) throw std::invalid_argument("separable_quadratic: shape mismatch");
  if (a.minCoeff() < 0.0) throw std::invalid_argument("separable_quadratic: weights must be nonnegative");
  return ObjectiveG(
      static_cast<int>(a.size()),
      [a, center](const Eigen::VectorXd& x) { return 0.5 * (a.array() * (x - center).array().square()).sum(); },
      [a, center](const Eigen::VectorXd& x) -> Eigen::VectorXd { return a.cwiseProduct(x - center); },
      a.maxCoeff());
}

ObjectiveG linear_objective(const Eigen::VectorXd& c) {
  return ObjectiveG(
      static_cast<int>(c.size()), [c](const Eigen::VectorXd& x) { return c.dot(x); },
      [c](const Eigen::VectorXd&) -> Eigen::VectorXd { return c; }, 0.0);
}

ObjectiveG log_sum_exp_objective(const Eigen::VectorXd& b, double c) {
  if (!(c >= 0.0)) throw std::invalid_argument("log_sum_exp: offset must be nonnegative");
  // Hessian is bounded by diag(b_i^2 p_i) <= max b_i^2.
  const double lip = b.size() > 0 ? b.cwiseAbs2().maxCoeff() : 0.0;
  return ObjectiveG(
      static_cast<int>(b.size()),
      [b, c](const Eigen::VectorXd& x) {
        const Eigen::ArrayXd t = b.array() * x.array();
        const double m = std::max(t.maxCoeff(), c > 0.0 ? std::log(c) : -1e300);
        return m + std::log((t - m).exp().sum() + (c > 0.0 ? std::exp(std::log(c) - m) : 0.0));
      },
      [b, c](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        const Eigen::ArrayXd t = b.array() * x.array();
        const double m = std::max(t.maxCoeff(), c > 0.0 ? std::log(c) : -1e300);
        const Eigen::ArrayXd e = (t - m).exp();
        const double denom = e.sum() + (c > 0.0 ? std::exp(std::log(c) - m) : 0.0);
        return (b.array() * e / denom).matrix();
      },
      lip);
}

ObjectiveG ellipsoidal_objective(int dim, double rate) {
  if (dim < 1 || !(rate > 0.0)) throw std::invalid_argument("ellipsoidal: needs dim >= 1 and rate > 0");
  Eigen::VectorXd w(dim);
  for (int i = 0; i < dim; ++i) w[i] = std::exp(-rate * i);
  return ObjectiveG(
      dim, [w](const Eigen::VectorXd& x) { return w.dot(x.array().cosh().matrix()); },
      [w](const Eigen::VectorXd& x) -> Eigen::VectorXd { return (w.array() * x.array().sinh()).matrix(); },
      std::cosh(4.0));
}

void SplitSchedule::validate(double lipschitz) const {
  if (horizon < 0) throw std::invalid_argument("schedule: horizon must be nonnegative");
  if (alphas.size() != static_cast<std::size_t>(horizon) + 1 ||
      lambdas.size() != static_cast<std::size_t>(horizon) + 1) {
    throw std::invalid_argument("schedule: alphas and lambdas need L+1 entries");
  }
  if (!(delta > 0.0)) throw std::invalid_argument("schedule: delta must be positive");
  if (rank < 1) throw std::invalid_argument("schedule: rank must be positive");
  const double lip = std::max(lipschitz, kMinLipschitz);
  for (int l = 0; l <= horizon; ++l) {
    const double a = alphas[l];
    const double lam = lambdas[l];
    if (!(a > 0.0 && a <= 1.0)) throw std::invalid_argument("schedule: alpha_l must lie in (0, 1]");
    if (!(lam > 0.0 && lam < 1.0 / lip)) throw std::invalid_argument("schedule: lambda_l must lie in (0, 1/lambda)");
    if (a * lam * lip > 1.0 + 1e-12) throw std::invalid_argument("schedule: alpha_l lambda_l lambda must be <= 1");
  }
  if (rule == ScheduleRule::Decay && !decay_compliant()) {
    throw std::invalid_argument("schedule: flagged decay-compliant but violates the decay bound");
  }
  if (rule == ScheduleRule::Ramp && !ramp_compliant()) {
    throw std::invalid_argument("schedule: flagged ramp-compliant but violates the ramp bound");
  }
}

bool SplitSchedule::decay_compliant() const {
  const double base = std::max(decay_constant, 1.0);
  for (int l = 0; l <= horizon && l < static_cast<int>(alphas.size()); ++l) {
    const double bound = std::ldexp(1.0, -l - horizon) * std::pow(base, -std::max(horizon - l - 1, 0));
    if (!(alphas[l] > 0.0) || alphas[l] > bound * (1.0 + 1e-12)) return false;
  }
  return true;
}

bool SplitSchedule::ramp_compliant() const {
  for (int l = 0; l <= horizon && l < static_cast<int>(alphas.size()); ++l) {
    const double bound = lambdas[l] * std::ldexp(1.0, 2 * l - horizon);
    if (!(alphas[l] > 0.0) || alphas[l] > bound * (1.0 + 1e-12)) return false;
  }
  return true;
}

SplitSchedule decay_schedule(int horizon, double constant, double lipschitz, int rank) {
  if (horizon < 1) throw std::invalid_argument("decay_schedule: horizon must be at least 1");
  if (!(constant >= 0.0)) throw std::invalid_argument("decay_schedule: constant must be nonnegative");
  SplitSchedule s;
  s.horizon = horizon;
  s.rank = rank;
  s.rule = ScheduleRule::Decay;
  s.decay_constant = constant;
  s.delta = std::ldexp(1.0, -horizon) / rank;
  const double base = std::max(constant, 1.0);
  const double lam = 0.5 / std::max(lipschitz, kMinLipschitz);
  for (int l = 0; l <= horizon; ++l) {
    s.alphas.push_back(
        exact_complement(std::ldexp(1.0, -l - horizon) * std::pow(base, -std::max(horizon - l - 1, 0))));
    s.lambdas.push_back(lam);
  }
  return s;
}

SplitSchedule ramp_schedule(int horizon, double lipschitz, int rank) {
  if (horizon < 1) throw std::invalid_argument("ramp_schedule: horizon must be at least 1");
  SplitSchedule s;
  s.horizon = horizon;
  s.rank = rank;
  s.rule = ScheduleRule::Ramp;
  s.delta = std::ldexp(1.0, -horizon) / rank;
  const double lam = 0.5 / std::max(lipschitz, kMinLipschitz);
  for (int l = 0; l <= horizon; ++l) {
    s.alphas.push_back(exact_complement(std::min(1.0, lam * std::ldexp(1.0, 2 * l - horizon))));
    s.lambdas.push_back(lam);
  }
  return s;
}

SplitSchedule constant_schedule(int horizon, double alpha, double lambda, double delta, int rank) {
  SplitSchedule s;
  s.horizon = horizon;
  s.rank = rank;
  s.delta = delta;
  s.alphas.assign(horizon + 1, alpha);
  s.lambdas.assign(horizon + 1, lambda);
  return s;
}

std::string to_string(ScheduleRule rule) {
  switch (rule) {
    case ScheduleRule::Custom:
      return "custom";
    case ScheduleRule::Decay:
      return "decay";
    case ScheduleRule::Ramp:
      return "ramp";
  }
  return "custom";
}

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::Exact:
      return "exact";
    case Scheme::Approx:
      return "approx";
    case Scheme::Projected:
      return "projected";
  }
  return "exact";
}

Eigen::VectorXd fd_grad(const ObjectiveG& g, const Eigen::VectorXd& x, double delta, int rank) {
  if (!(delta > 0.0)) throw std::invalid_argument("fd_grad: delta must be positive");
  if (rank < 1 || rank > x.size()) throw std::invalid_argument("fd_grad: rank out of range");
  const double base = g(x);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd probe = x;
  for (int i = 0; i < rank; ++i) {
    probe[i] = x[i] + delta;
    out[i] = (g(probe) - base) / delta;
    probe[i] = x[i];
  }
  return out;
}

CoeffVec fd_grad(const ObjectiveG& g, const CoeffVec& x, double delta, int rank) {
  if (rank > x.basis().max_rank()) throw std::invalid_argument("fd_grad: rank exceeds basis max-rank");
  return CoeffVec(x.basis_ptr(), fd_grad(g, x.coeffs(), delta, rank));
}

std::vector<FdErrorRow> fd_error_sweep(const ObjectiveG& g, const Eigen::VectorXd& x, const std::vector<int>& ranks,
                                       const std::vector<double>& deltas) {
  const Eigen::VectorXd exact = g.gradient(x);
  std::vector<FdErrorRow> rows;
  for (int r : ranks) {
    for (double delta : deltas) {
      const Eigen::VectorXd diff = fd_grad(g, x, delta, r) - exact;
      FdErrorRow row;
      row.rank = r;
      row.delta = delta;
      row.error = diff.norm();
      row.in_rank_error = diff.head(r).norm();
      row.tail = exact.tail(x.size() - r).norm();
      rows.push_back(row);
    }
  }
  return rows;
}

CoeffVec fb_step(const CoeffVec& x, const ProxFn& f, const ObjectiveG& g, double alpha, double lam, double tau) {
  if (!g.has_gradient()) throw std::invalid_argument("fb_step: the exact scheme needs an analytic gradient");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("fb_step: alpha must lie in (0, 1]");
  const Eigen::VectorXd pre = step_point(x.coeffs(), g.gradient(x.coeffs()), lam);
  const Eigen::VectorXd p = prox_apply(f, tau, x.basis(), pre);
  return CoeffVec(x.basis_ptr(), (1.0 - alpha) * x.coeffs() + alpha * p);
}

CoeffVec approx_fb_step(const CoeffVec& x, const ProxFn& f, const ObjectiveG& g, double alpha, double lam,
                        double delta, int rank, double tau) {
  const Eigen::VectorXd pre = step_point(x.coeffs(), fd_grad(g, x.coeffs(), delta, rank), lam);
  const Eigen::VectorXd p = prox_apply(f, tau, x.basis(), pre);
  return CoeffVec(x.basis_ptr(), (1.0 - alpha) * x.coeffs() + alpha * p);
}

CoeffVec projected_fb_step(const CoeffVec& z, const ProxFn& f, const ObjectiveG& g, double alpha, double lam,
                           double delta, int rank, double tau) {
  const Eigen::VectorXd pre = step_point(z.coeffs(), fd_grad(g, z.coeffs(), delta, rank), lam);
  Eigen::VectorXd p = prox_apply(f, tau, z.basis(), pre);
  p.tail(p.size() - rank).setZero();
  return CoeffVec(z.basis_ptr(), (1.0 - alpha) * z.coeffs() + alpha * p);
}

double objective_value(const ProxFn& f, const ObjectiveG& g, const CoeffVec& x) {
  return fn_value(f, x) + g.value(x);
}

Trajectory run_scheme(const CoeffVec& x0, const SplitSchedule& schedule, const ProxFn& f, const ObjectiveG& g,
                      Scheme scheme, double tau) {
  schedule.validate(g.lipschitz());
  if (scheme == Scheme::Exact && !g.has_gradient()) {
    throw std::invalid_argument("run_scheme: the exact scheme needs an analytic gradient");
  }
  if (schedule.rank > x0.rank()) throw std::invalid_argument("run_scheme: schedule rank exceeds state rank");
  Trajectory traj;
  traj.scheme = scheme;
  traj.iterates.push_back(x0);
  traj.losses.push_back(objective_value(f, g, x0));
  for (int l = 0; l < schedule.horizon; ++l) {
    const CoeffVec& x = traj.iterates.back();
    const double a = schedule.alphas[l];
    const double lam = schedule.lambdas[l];
    Eigen::VectorXd pre;
    if (scheme == Scheme::Exact) {
      pre = step_point(x.coeffs(), g.gradient(x.coeffs()), lam);
    } else {
      pre = step_point(x.coeffs(), fd_grad(g, x.coeffs(), schedule.delta, schedule.rank), lam);
    }
    Eigen::VectorXd p = prox_apply(f, tau, x.basis(), pre);
    if (scheme == Scheme::Projected) p.tail(p.size() - schedule.rank).setZero();
    Eigen::VectorXd next = (1.0 - a) * x.coeffs() + a * p;
    if (!next.allFinite() || next.norm() > kDivergenceNorm) {
      traj.diverged = true;
      break;
    }
    traj.iterates.emplace_back(x.basis_ptr(), std::move(next));
    traj.losses.push_back(objective_value(f, g, traj.iterates.back()));
  }
  return traj;
}

CoeffVec reference_minimizer(const CoeffVec& x0, const ProxFn& f, const ObjectiveG& g, int max_steps) {
  if (!g.has_gradient()) throw std::invalid_argument("reference_minimizer: needs an analytic gradient");
  const double lam = 0.5 / g.lipschitz();
  Eigen::VectorXd x = x0.coeffs();
  for (int k = 0; k < max_steps; ++k) {
    Eigen::VectorXd next = prox_apply(f, 1.0, x0.basis(), step_point(x, g.gradient(x), lam));
    if (!next.allFinite()) throw std::runtime_error("reference_minimizer: iterate became non-finite");
    const bool settled = (next - x).cwiseAbs().maxCoeff() == 0.0;
    x = std::move(next);
    if (settled) break;
  }
  return CoeffVec(x0.basis_ptr(), std::move(x));
}

DeviationReport deviation_report(const CoeffVec& x0, const SplitSchedule& schedule, const ProxFn& f,
                                 const ObjectiveG& g, double tau) {
  const Trajectory exact = run_scheme(x0, schedule, f, g, Scheme::Exact, tau);
  const Trajectory approx = run_scheme(x0, schedule, f, g, Scheme::Approx, tau);
  const Trajectory projected = run_scheme(x0, schedule, f, g, Scheme::Projected, tau);
  if (exact.diverged || approx.diverged || projected.diverged) {
    throw std::runtime_error("deviation_report: a scheme diverged");
  }
  DeviationReport r;
  r.exact_vs_approx = (exact.final().coeffs() - approx.final().coeffs()).norm();
  r.approx_vs_projected = (approx.final().coeffs() - projected.final().coeffs()).norm();
  r.rule = schedule.rule;
  return r;
}

}  // namespace geoprox
