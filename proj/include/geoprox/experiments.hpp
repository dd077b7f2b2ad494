#pragma once

#include "geoprox/autodiff.hpp"
#include "geoprox/geo.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace geoprox {

enum class Family { MinOp, PdeRd };
enum class InitKind { Random, Theoretical };

std::string to_string(Family family);
std::string to_string(InitKind init);

struct MinOpParams {
  int dim = 2;
  double box_lo = -1.0;
  double box_hi = 1.0;
  int oracle_steps = 200000;
};

struct PdeParams {
  double nu_lo = 0.01;
  double nu_hi = 0.4;
  double horizon = 1.0;
  double grid_lo = -10.0;
  double grid_hi = 10.0;
  int grid_points = 2001;
  int time_steps = 2000;
};

struct ExperimentConfig {
  Family family = Family::MinOp;
  int rank = 2;
  int depth = 20;
  int width = 20;
  int epochs = 2000;
  double lr = 1e-3;
  int batch_size = 50;
  int n_train = 2000;
  int n_test = 200;
  int eval_interval = 100;
  std::uint64_t seed = 0;
  InitKind init = InitKind::Random;
  double init_delta = 0.01;
  double noise_stddev = 0.0;  // 0 selects the zero noise draw
  bool train_samples = false;
  bool train_gates = true;
  MinOpParams minop;
  PdeParams pde;

  /// Desk-scale defaults for a family.
  static ExperimentConfig defaults(Family family);
  /// Throws ConfigError listing every violated field.
  void validate() const;
};

/// Schema violation; `fields` names every offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& what, std::vector<std::string> fields)
      : std::invalid_argument(what), fields(std::move(fields)) {}
  std::vector<std::string> fields;
};

/// Strict parse: unknown keys and ill-typed or out-of-range values are all
/// collected before throwing. Missing keys take the family defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Every field, defaults included; config_from_json(to_json(c)) == c.
nlohmann::json to_json(const ExperimentConfig& config);

/// Parameters of the smooth loss g of one instance.
struct GSpec {
  enum class Kind { Quadratic, LogSumExp, Diffusion };
  Kind kind = Kind::Quadratic;
  Eigen::MatrixXd a;  // Quadratic
  Eigen::VectorXd b;  // Quadratic, LogSumExp
  double c = 0.0;     // Quadratic, LogSumExp
  double nu = 0.0;    // Diffusion

  static GSpec quadratic(Eigen::MatrixXd a, Eigen::VectorXd b, double c);
  static GSpec log_sum_exp(Eigen::VectorXd b, double c);
  static GSpec diffusion(double nu);
};

/// g on rank-R coefficient vectors. Diffusion instances use
/// g(z) = nu/2 ||D z||^2 with the (R+1) x R derivative matrix D of `basis`.
ObjectiveG make_objective(const GSpec& spec, const Basis& basis, int rank);

/// Quadratic form of g when it has one: g(x) = x^T Q x / 2 + q^T x + q0.
struct QuadraticForm {
  Eigen::MatrixXd Q;
  Eigen::VectorXd q;
  double q0 = 0.0;
};
std::optional<QuadraticForm> quadratic_form(const GSpec& spec, const Basis& basis, int rank);

struct LabeledInstance {
  GSpec g;
  CoeffVec target;
};

struct Dataset {
  BasisPtr basis;
  ProxFn prox;
  std::vector<LabeledInstance> train;
  std::vector<LabeledInstance> test;
};

/// Quadratic train set and sign-coherent log-sum-exp test set; targets from
/// the long-horizon exact FB oracle over the box.
Dataset gen_minop_dataset(const ExperimentConfig& config);

/// Crank-Nicolson diffusion with zero boundary values followed by the exact
/// reaction resolvent per step. Throws std::runtime_error when max |y| grows
/// beyond 10x its initial value.
GridFn pde_reference(double nu, double horizon, const std::vector<double>& nodes, int steps, bool reaction = true);
/// y0(u) = 5 u exp(-u^2).
double pde_initial(double u);

/// Basis used by the PDE family: Hermite functions up to rank 2R.
BasisPtr pde_basis(int rank);

Dataset gen_pde_dataset(const ExperimentConfig& config);

/// Truncation energy of the reference solution beyond rank R, relative to
/// its rank-2R energy.
double pde_truncation_ratio(const ExperimentConfig& config, double nu);

/// Initial GeoParams for a config: perturbed identity layers with delta-scaled
/// basis samples plus the zero point, or the unrolled splitting weights.
GeoParams init_params(const ExperimentConfig& config, const Dataset& data);

/// Prox parameter used by the family's activation.
double family_tau(const ExperimentConfig& config);

/// Mean squared coefficient error (1/K) sum_k ||G(g_k) - target_k||^2 and,
/// when `grads` is non-null, its gradient accumulated in instance order.
/// Quadratic instances with frozen sample points use a closed-form sampling
/// kernel; everything else goes through the tape.
double batch_loss(const GeoParams& params, const Dataset& data, const std::vector<LabeledInstance>& set,
                  const std::vector<std::size_t>& indices, GeoParams* grads);

/// Per-instance evaluation of a trained operator.
struct EvalStats {
  double mse = 0.0;
  double median_rel_l2 = 0.0;
  double frac_within = 0.0;  // share with sup-norm error <= tolerance
  std::vector<Eigen::VectorXd> predictions;
};
EvalStats evaluate(const GeoParams& params, const Dataset& data, const std::vector<LabeledInstance>& set,
                   double sup_tolerance = 0.15);

struct MetricsRow {
  int epoch = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;
};

struct ExperimentResult {
  std::vector<MetricsRow> metrics;
  GeoParams params;
  EvalStats test;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Minibatch Adam on the train MSE. Rows are written at epoch 0, every
/// eval_interval epochs and at the last epoch. Deterministic given the seed.
ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& data);
ExperimentResult run_experiment(const ExperimentConfig& config);
Dataset make_dataset(const ExperimentConfig& config);

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows);

/// l_{f,g}(G(g)) - l_{f,g}(target) with f = params.prox.
double loss_gap_eval(const GeoParams& params, const Dataset& data, const LabeledInstance& instance);

}  // namespace geoprox
