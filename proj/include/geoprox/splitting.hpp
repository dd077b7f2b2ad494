#pragma once

#include "geoprox/hilbert.hpp"
#include "geoprox/prox.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace geoprox {

/// Smooth component g of the objective, acting on coefficient vectors of a
/// fixed dimension.
class ObjectiveG {
 public:
  using Value = std::function<double(const Eigen::VectorXd&)>;
  using Gradient = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

  /// A supplied gradient must agree with central differences (relative error
  /// below 1e-4) at five seeded random points, else std::invalid_argument.
  /// A Lipschitz bound of 0 (affine g) is stored as 1e-12.
  ObjectiveG(int dim, Value value, std::optional<Gradient> gradient, double lipschitz,
             std::uint64_t check_seed = 0x5eed);

  int dim() const { return dim_; }
  double lipschitz() const { return lipschitz_; }
  bool has_gradient() const { return gradient_.has_value(); }

  double operator()(const Eigen::VectorXd& x) const { return value_(x); }
  double value(const CoeffVec& x) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const;

  /// g restricted to E_rank: z -> g(z padded with zeros to dim()).
  ObjectiveG restricted(int rank) const;

 private:
  ObjectiveG() = default;

  int dim_ = 0;
  Value value_;
  std::optional<Gradient> gradient_;
  double lipschitz_ = 0.0;
};

/// g(x) = x^T A x / 2 + b^T x + c with A symmetric positive semidefinite.
ObjectiveG quadratic_objective(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double c);
/// g(x) = sum_i a_i (x_i - center_i)^2 / 2.
ObjectiveG separable_quadratic(const Eigen::VectorXd& a, const Eigen::VectorXd& center);
/// g(x) = <c, x>.
ObjectiveG linear_objective(const Eigen::VectorXd& c);
/// g(x) = ln(sum_i exp(b_i x_i) + c), c >= 0.
ObjectiveG log_sum_exp_objective(const Eigen::VectorXd& b, double c);

/// g(x) = sum_i exp(-rate i) cosh(x_i): the derivative along e_i carries the
/// weight exp(-rate i). The Lipschitz bound assumes ||x||_inf <= 4.
ObjectiveG ellipsoidal_objective(int dim, double rate);

enum class ScheduleRule { Custom, Decay, Ramp };

/// Step sequences for the splitting iterations. alphas and lambdas hold L+1
/// entries; L steps consume indices 0..L-1.
struct SplitSchedule {
  int horizon = 0;
  std::vector<double> alphas;
  std::vector<double> lambdas;
  double delta = 1e-6;
  int rank = 1;
  ScheduleRule rule = ScheduleRule::Custom;
  double decay_constant = 1.0;  // C in the decay bound, recorded for checks

  /// Throws std::invalid_argument naming the violated condition.
  void validate(double lipschitz) const;
  /// alpha_l <= 2^{-l-L} max(C,1)^{-(L-l-1)_+} for every l.
  bool decay_compliant() const;
  /// alpha_l <= lambda_l 2^{2l-L} for every l.
  bool ramp_compliant() const;
};

/// Maximal decay-compliant gates, lambda_l = 1/(2 lipschitz), delta = 2^{-L}/R.
/// Both generated rules round each alpha down to a value whose complement
/// 1 - alpha is exact, so gated layers with gamma = 1 - alpha replay it exactly.
SplitSchedule decay_schedule(int horizon, double constant, double lipschitz, int rank);
/// alpha_l = min(1, lambda_l 2^{2l-L}) with lambda_l = 1/(2 lipschitz), delta = 2^{-L}/R.
SplitSchedule ramp_schedule(int horizon, double lipschitz, int rank);
/// Constant alpha and lambda.
SplitSchedule constant_schedule(int horizon, double alpha, double lambda, double delta, int rank);

std::string to_string(ScheduleRule rule);

/// Rank-R forward divided difference sum_{i<R} (g(x + delta e_i) - g(x))/delta e_i.
CoeffVec fd_grad(const ObjectiveG& g, const CoeffVec& x, double delta, int rank);
Eigen::VectorXd fd_grad(const ObjectiveG& g, const Eigen::VectorXd& x, double delta, int rank);

struct FdErrorRow {
  int rank = 0;
  double delta = 0.0;
  double error = 0.0;          // ||fd_grad - grad g||
  double in_rank_error = 0.0;  // same, restricted to coordinates < rank
  double tail = 0.0;           // ||grad g|| over coordinates >= rank
};

/// Divided-difference error at x for every (rank, delta) pair, ranks outermost.
std::vector<FdErrorRow> fd_error_sweep(const ObjectiveG& g, const Eigen::VectorXd& x, const std::vector<int>& ranks,
                                       const std::vector<double>& deltas);

CoeffVec fb_step(const CoeffVec& x, const ProxFn& f, const ObjectiveG& g, double alpha, double lam,
                 double tau = 1.0);
CoeffVec approx_fb_step(const CoeffVec& x, const ProxFn& f, const ObjectiveG& g, double alpha, double lam,
                        double delta, int rank, double tau = 1.0);
CoeffVec projected_fb_step(const CoeffVec& z, const ProxFn& f, const ObjectiveG& g, double alpha, double lam,
                           double delta, int rank, double tau = 1.0);

enum class Scheme { Exact, Approx, Projected };
std::string to_string(Scheme scheme);

struct Trajectory {
  std::vector<CoeffVec> iterates;
  std::vector<double> losses;
  Scheme scheme = Scheme::Exact;
  /// Set when an iterate norm exceeded the divergence threshold or became
  /// non-finite; the trajectory stops at the last finite iterate.
  bool diverged = false;

  const CoeffVec& final() const { return iterates.back(); }
};

/// l_{f,g}(x) = f(x) + g(x).
double objective_value(const ProxFn& f, const ObjectiveG& g, const CoeffVec& x);

Trajectory run_scheme(const CoeffVec& x0, const SplitSchedule& schedule, const ProxFn& f, const ObjectiveG& g,
                      Scheme scheme, double tau = 1.0);

/// Long-horizon exact FB run (alpha = 1, lambda = 1/(2 lipschitz)); stops early
/// once an iterate repeats. Used as the optimum oracle where no closed form exists.
CoeffVec reference_minimizer(const CoeffVec& x0, const ProxFn& f, const ObjectiveG& g, int max_steps = 5000);

struct DeviationReport {
  double exact_vs_approx = 0.0;
  double approx_vs_projected = 0.0;
  ScheduleRule rule = ScheduleRule::Custom;
};

DeviationReport deviation_report(const CoeffVec& x0, const SplitSchedule& schedule, const ProxFn& f,
                                 const ObjectiveG& g, double tau = 1.0);

}  // namespace geoprox
