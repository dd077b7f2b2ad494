#pragma once

#include "geoprox/experiments.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>

namespace geoprox::cli {

enum class Subcommand { ProxCheck, Solve, FdCheck, GeoEquiv, Train, Eval, Report };

std::optional<Subcommand> parse_subcommand(const std::string& name);
std::string to_string(Subcommand sub);

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kParseError = 2, kIoError = 3 };

struct Invocation {
  Subcommand subcommand = Subcommand::ProxCheck;
  std::optional<std::string> config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  std::optional<std::string> model_path;  // eval only; defaults to <out>/model.json
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads one JSON object. Missing or unreadable files raise IoError; malformed
/// JSON raises ConfigError.
nlohmann::json read_json_file(const std::string& path);

/// Strict ExperimentConfig parse with an optional seed override.
ExperimentConfig parse_config(const std::string& path, std::optional<std::uint64_t> seed = std::nullopt);

/// Box/quadratic-style splitting problem for the solve subcommand.
struct ProblemSpec {
  int dim = 0;
  ProxFn prox;
  double tau = 1.0;
  nlohmann::json g;  // validated description, rebuilt by make_g
  Eigen::VectorXd x0;
  Scheme scheme = Scheme::Exact;
  SplitSchedule schedule;
  std::optional<double> gap_tolerance;

  ObjectiveG make_g() const;
};

ProblemSpec parse_problem_spec(const nlohmann::json& j);
nlohmann::json to_json(const ProblemSpec& spec);

/// Runs one subcommand, writing its outputs under out_dir. Progress goes to
/// `log` unless quiet. Never throws; failures map onto ExitCode.
int dispatch(const Invocation& inv, std::ostream& log, std::ostream& err);

/// Shared %.17g formatting for every primary output.
std::string fmt(double x);

}  // namespace geoprox::cli
