#include "geoprox/cli.hpp"

#include "geoprox/rng.hpp"
#include "json_fields.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace geoprox::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using detail::JsonFields;

std::optional<Subcommand> parse_subcommand(const std::string& name) {
  static const std::map<std::string, Subcommand> table = {
      {"prox-check", Subcommand::ProxCheck}, {"solve", Subcommand::Solve}, {"fd-check", Subcommand::FdCheck},
      {"geo-equiv", Subcommand::GeoEquiv},   {"train", Subcommand::Train}, {"eval", Subcommand::Eval},
      {"report", Subcommand::Report}};
  const auto it = table.find(name);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::string to_string(Subcommand sub) {
  switch (sub) {
    case Subcommand::ProxCheck: return "prox-check";
    case Subcommand::Solve: return "solve";
    case Subcommand::FdCheck: return "fd-check";
    case Subcommand::GeoEquiv: return "geo-equiv";
    case Subcommand::Train: return "train";
    case Subcommand::Eval: return "eval";
    case Subcommand::Report: return "report";
  }
  return "?";
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in '" + path + "': " + e.what(), {"<root>"});
  }
}

namespace {

void throw_if_bad(std::vector<std::string> bad, const std::string& what) {
  if (bad.empty()) return;
  std::sort(bad.begin(), bad.end());
  bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
  std::string msg = what + " rejected; offending keys:";
  for (const auto& k : bad) msg += " " + k;
  throw ConfigError(msg, bad);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json optional_config(const Invocation& inv) {
  if (!inv.config_path) return json::object();
  json j = read_json_file(*inv.config_path);
  if (!j.is_object()) throw ConfigError("config must be a JSON object", {"<root>"});
  return j;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

ProxFn parse_prox(const json& j, const std::string& prefix, std::vector<std::string>& bad) {
  if (!j.is_object()) {
    bad.push_back(prefix);
    return ProxFn::zero();
  }
  JsonFields r(j, prefix + ".", bad);
  std::string kind = "zero";
  r.get("kind", kind);
  ProxFn f;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  double weight = 1.0;
  double c = 1.0;
  bool stated = false;
  if (kind == "box") {
    // null selects an unbounded side.
    for (const char* key : {"lo", "hi"}) {
      if (r.has(key) && r.at(key).is_null()) continue;
      r.get(key, key[0] == 'l' ? lo : hi);
    }
  } else if (kind == "l1") {
    r.get("weight", weight);
  } else if (kind == "quadratic") {
    r.get("c", c);
  } else if (kind == "reaction") {
    r.get("stated_form", stated);
  } else if (kind != "zero") {
    r.flag("kind");
  }
  r.reject_unknown();
  try {
    if (kind == "box") return ProxFn::box(lo, hi);
    if (kind == "l1") return ProxFn::l1(weight);
    if (kind == "quadratic") return ProxFn::quadratic(c);
    if (kind == "reaction") return ProxFn::reaction(stated);
  } catch (const std::invalid_argument&) {
    bad.push_back(prefix);
  }
  return ProxFn::zero();
}

// ---------------------------------------------------------------- prox-check

struct ProxCheckConfig {
  std::vector<double> taus{0.1, 1.0, 10.0};
  int samples = 100;
  int dim = 4;
  double resolution = 1e-4;
  double tolerance = 2e-4;
  double scale = 3.0;
  std::uint64_t seed = 0;
};

json to_json(const ProxCheckConfig& c) {
  return {{"taus", c.taus},           {"samples", c.samples},     {"dim", c.dim}, {"resolution", c.resolution},
          {"tolerance", c.tolerance}, {"scale", c.scale},         {"seed", c.seed}};
}

std::vector<ProxFn> default_catalog() {
  return {ProxFn::zero(), ProxFn::box(-1.0, 1.0), ProxFn::l1(0.5), ProxFn::quadratic(2.0), ProxFn::reaction()};
}

int run_prox_check(const Invocation& inv, const fs::path& out, std::ostream& log) {
  const json j = optional_config(inv);
  std::vector<std::string> bad;
  ProxCheckConfig c;
  JsonFields r(j, "", bad);
  r.get("taus", c.taus);
  r.get("samples", c.samples);
  r.get("dim", c.dim);
  r.get("resolution", c.resolution);
  r.get("tolerance", c.tolerance);
  r.get("scale", c.scale);
  r.get("seed", c.seed);
  r.reject_unknown();
  if (inv.seed) c.seed = *inv.seed;
  if (c.samples < 1) bad.push_back("samples");
  if (c.dim < 1) bad.push_back("dim");
  if (!(c.resolution > 0.0)) bad.push_back("resolution");
  if (c.taus.empty() || std::any_of(c.taus.begin(), c.taus.end(), [](double t) { return !(t > 0.0); })) {
    bad.push_back("taus");
  }
  throw_if_bad(bad, "prox-check config");
  write_file(out / "config.resolved.json", dump(to_json(c)));

  const BasisPtr basis = Basis::standard(c.dim);
  RngStream rng(substream_seed(c.seed, "prox-check"));
  std::ostringstream csv;
  csv << "prox,tau,max_error,status\n";
  bool all_pass = true;
  for (const ProxFn& f : default_catalog()) {
    for (double tau : c.taus) {
      double worst = 0.0;
      for (int s = 0; s < c.samples; ++s) {
        Eigen::VectorXd x(c.dim);
        for (int i = 0; i < c.dim; ++i) x[i] = c.scale * rng.normal();
        const CoeffVec v(basis, x);
        const double e = (prox_eval(f, tau, v).coeffs() - prox_bruteforce(f, tau, v, c.resolution).coeffs())
                             .cwiseAbs()
                             .maxCoeff();
        worst = std::max(worst, e);
      }
      const bool pass = worst <= c.tolerance;
      all_pass = all_pass && pass;
      csv << f.name() << "," << fmt(tau) << "," << fmt(worst) << "," << (pass ? "PASS" : "FAIL") << "\n";
      log << f.name() << " tau=" << tau << " max_error=" << worst << (pass ? " PASS" : " FAIL") << "\n";
    }
  }
  write_file(out / "prox_check.csv", csv.str());
  return all_pass ? kOk : kCheckFailed;
}

// --------------------------------------------------------------------- solve

ObjectiveG g_from_json(const json& g, int dim) {
  const std::string kind = g.at("kind").get<std::string>();
  auto vec = [&](const char* key) { return to_vector(g.at(key).get<std::vector<double>>()); };
  if (kind == "quadratic") {
    const auto rows = g.at("a").get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd a(dim, dim);
    for (int i = 0; i < dim; ++i) {
      for (int k = 0; k < dim; ++k) a(i, k) = rows.at(i).at(k);
    }
    return quadratic_objective(a, vec("b"), g.value("c", 0.0));
  }
  if (kind == "separable") return separable_quadratic(vec("a"), vec("center"));
  if (kind == "linear") return linear_objective(vec("c"));
  if (kind == "log_sum_exp") return log_sum_exp_objective(vec("b"), g.value("c", 0.0));
  throw std::invalid_argument("unknown g kind '" + kind + "'");
}

void validate_g(const json& g, int dim, std::vector<std::string>& bad) {
  if (!g.is_object()) {
    bad.push_back("g");
    return;
  }
  JsonFields r(g, "g.", bad);
  std::string kind;
  r.get("kind", kind);
  auto want_vec = [&](const char* key) {
    std::vector<double> v;
    r.get(key, v);
    if (v.size() != static_cast<std::size_t>(dim)) r.flag(key);
  };
  if (kind == "quadratic") {
    r.mark("a");
    bool ok = r.has("a") && g.at("a").is_array() && g.at("a").size() == static_cast<std::size_t>(dim);
    if (ok) {
      for (const auto& row : g.at("a")) {
        ok = ok && row.is_array() && row.size() == static_cast<std::size_t>(dim) &&
             std::all_of(row.begin(), row.end(), [](const json& e) { return e.is_number(); });
      }
    }
    if (!ok) r.flag("a");
    want_vec("b");
    double c = 0.0;
    r.get("c", c);
  } else if (kind == "separable") {
    want_vec("a");
    want_vec("center");
  } else if (kind == "linear") {
    want_vec("c");
  } else if (kind == "log_sum_exp") {
    want_vec("b");
    double c = 0.0;
    r.get("c", c);
  } else {
    r.flag("kind");
  }
  r.reject_unknown();
}

Scheme scheme_from(const std::string& s, bool& ok) {
  ok = true;
  if (s == "exact") return Scheme::Exact;
  if (s == "approx") return Scheme::Approx;
  if (s == "projected") return Scheme::Projected;
  ok = false;
  return Scheme::Exact;
}

// Builds the schedule once g's Lipschitz bound is known.
struct ScheduleSpec {
  std::string rule = "constant";
  int horizon = 200;
  double alpha = 1.0;
  std::optional<double> lambda;
  double delta = 1e-6;
  std::optional<int> rank;
  double constant = 1.0;
};

}  // namespace

ObjectiveG ProblemSpec::make_g() const { return g_from_json(g, dim); }

ProblemSpec parse_problem_spec(const json& j) {
  if (!j.is_object()) throw ConfigError("problem spec must be a JSON object", {"<root>"});
  std::vector<std::string> bad;
  ProblemSpec p;
  JsonFields r(j, "", bad);
  r.get("dim", p.dim);
  if (p.dim < 1) throw_if_bad({"dim"}, "problem spec");
  if (r.has("prox")) {
    p.prox = parse_prox(r.at("prox"), "prox", bad);
  } else {
    r.mark("prox");
  }
  r.get("tau", p.tau);
  if (!(p.tau > 0.0)) bad.push_back("tau");
  if (r.has("g")) {
    p.g = r.at("g");
    validate_g(p.g, p.dim, bad);
  } else {
    bad.push_back("g");
  }
  std::vector<double> x0(p.dim, 0.0);
  r.get("x0", x0);
  if (x0.size() != static_cast<std::size_t>(p.dim)) bad.push_back("x0");
  p.x0 = to_vector(x0);
  std::string scheme = "exact";
  r.get("scheme", scheme);
  bool scheme_ok = true;
  p.scheme = scheme_from(scheme, scheme_ok);
  if (!scheme_ok) bad.push_back("scheme");
  double tol = 0.0;
  if (r.has("gap_tolerance")) {
    r.get("gap_tolerance", tol);
    p.gap_tolerance = tol;
  } else {
    r.mark("gap_tolerance");
  }

  ScheduleSpec s;
  if (r.has("schedule")) {
    const json& sj = r.at("schedule");
    if (!sj.is_object()) {
      bad.push_back("schedule");
    } else {
      JsonFields sr(sj, "schedule.", bad);
      sr.get("rule", s.rule);
      sr.get("horizon", s.horizon);
      sr.get("alpha", s.alpha);
      double lam = 0.0;
      if (sr.has("lambda")) {
        sr.get("lambda", lam);
        s.lambda = lam;
      }
      sr.mark("lambda");
      sr.get("delta", s.delta);
      int rank = 0;
      if (sr.has("rank")) {
        sr.get("rank", rank);
        s.rank = rank;
      }
      sr.mark("rank");
      sr.get("constant", s.constant);
      sr.reject_unknown();
    }
  } else {
    r.mark("schedule");
  }
  r.reject_unknown();
  if (s.rule != "constant" && s.rule != "decay" && s.rule != "ramp") bad.push_back("schedule.rule");
  if (s.horizon < 0) bad.push_back("schedule.horizon");
  const int rank = s.rank.value_or(p.dim);
  if (rank < 1 || rank > p.dim) bad.push_back("schedule.rank");
  throw_if_bad(bad, "problem spec");

  ObjectiveG g = [&] {
    try {
      return p.make_g();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("problem spec rejected; g: ") + e.what(), {"g"});
    }
  }();
  const double lip = g.lipschitz();
  if (s.rule == "decay") {
    p.schedule = decay_schedule(s.horizon, s.constant, lip, rank);
  } else if (s.rule == "ramp") {
    p.schedule = ramp_schedule(s.horizon, lip, rank);
  } else {
    p.schedule = constant_schedule(s.horizon, s.alpha, s.lambda.value_or(0.5 / lip), s.delta, rank);
  }
  try {
    p.schedule.validate(lip);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("problem spec rejected; schedule: ") + e.what(), {"schedule"});
  }
  return p;
}

json to_json(const ProblemSpec& p) {
  json j;
  j["dim"] = p.dim;
  j["prox"] = to_json(p.prox);
  j["tau"] = p.tau;
  j["g"] = p.g;
  j["x0"] = std::vector<double>(p.x0.begin(), p.x0.end());
  j["scheme"] = to_string(p.scheme);
  json s;
  s["rule"] = p.schedule.rule == ScheduleRule::Custom ? "constant" : to_string(p.schedule.rule);
  s["horizon"] = p.schedule.horizon;
  s["rank"] = p.schedule.rank;
  s["delta"] = p.schedule.delta;
  if (p.schedule.rule == ScheduleRule::Custom) {
    s["alpha"] = p.schedule.alphas.empty() ? 1.0 : p.schedule.alphas.front();
    s["lambda"] = p.schedule.lambdas.empty() ? 0.0 : p.schedule.lambdas.front();
  } else if (p.schedule.rule == ScheduleRule::Decay) {
    s["constant"] = p.schedule.decay_constant;
  }
  j["schedule"] = s;
  if (p.gap_tolerance) j["gap_tolerance"] = *p.gap_tolerance;
  return j;
}

namespace {

int run_solve(const Invocation& inv, const fs::path& out, std::ostream& log) {
  if (!inv.config_path) throw ConfigError("solve requires --config", {"--config"});
  const ProblemSpec p = parse_problem_spec(read_json_file(*inv.config_path));
  write_file(out / "config.resolved.json", dump(to_json(p)));
  const ObjectiveG g = p.make_g();
  const BasisPtr basis = Basis::standard(p.dim);
  const CoeffVec x0(basis, p.x0);
  const Trajectory traj = run_scheme(x0, p.schedule, p.prox, g, p.scheme, p.tau);
  const CoeffVec best = reference_minimizer(x0, p.prox, g, 100000);
  const double optimum = objective_value(p.prox, g, best);

  std::ostringstream csv;
  csv << "step,loss,gap";
  for (int i = 0; i < p.dim; ++i) csv << ",x" << i;
  csv << "\n";
  for (std::size_t k = 0; k < traj.iterates.size(); ++k) {
    csv << k << "," << fmt(traj.losses[k]) << "," << fmt(traj.losses[k] - optimum);
    for (int i = 0; i < p.dim; ++i) csv << "," << fmt(traj.iterates[k][i]);
    csv << "\n";
  }
  write_file(out / "trajectory.csv", csv.str());

  const double gap = traj.losses.back() - optimum;
  const bool pass = !traj.diverged && (!p.gap_tolerance || gap <= *p.gap_tolerance);
  json summary = {{"steps", p.schedule.horizon}, {"scheme", to_string(p.scheme)}, {"final_loss", traj.losses.back()},
                  {"optimum", optimum},          {"final_gap", gap},              {"diverged", traj.diverged},
                  {"pass", pass}};
  if (p.gap_tolerance) summary["gap_tolerance"] = *p.gap_tolerance;
  write_file(out / "solve.json", dump(summary));
  log << "final gap " << gap << (pass ? " PASS" : " FAIL") << "\n";
  return pass ? kOk : kCheckFailed;
}

// ------------------------------------------------------------------ fd-check

struct FdCheckConfig {
  int dim = 40;
  double rate = 0.5;
  std::vector<int> ranks{4, 8, 16};
  std::vector<double> deltas{1e-2, 1e-3, 1e-4};
  int points = 3;
  std::uint64_t seed = 0;
};

// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

int run_fd_check(const Invocation& inv, const fs::path& out, std::ostream& log) {
  const json j = optional_config(inv);
  std::vector<std::string> bad;
  FdCheckConfig c;
  JsonFields r(j, "", bad);
  r.get("dim", c.dim);
  r.get("rate", c.rate);
  r.get("ranks", c.ranks);
  r.get("deltas", c.deltas);
  r.get("points", c.points);
  r.get("seed", c.seed);
  r.reject_unknown();
  if (inv.seed) c.seed = *inv.seed;
  if (c.dim < 2) bad.push_back("dim");
  if (!(c.rate > 0.0)) bad.push_back("rate");
  if (c.points < 1) bad.push_back("points");
  if (c.ranks.empty() || std::any_of(c.ranks.begin(), c.ranks.end(), [&](int k) { return k < 1 || k >= c.dim; })) {
    bad.push_back("ranks");
  }
  if (c.deltas.size() < 2 || std::any_of(c.deltas.begin(), c.deltas.end(), [](double d) { return !(d > 0.0); })) {
    bad.push_back("deltas");
  }
  throw_if_bad(bad, "fd-check config");
  write_file(out / "config.resolved.json",
             dump({{"dim", c.dim}, {"rate", c.rate}, {"ranks", c.ranks}, {"deltas", c.deltas}, {"points", c.points},
                   {"seed", c.seed}}));

  std::sort(c.ranks.begin(), c.ranks.end());
  const ObjectiveG g = ellipsoidal_objective(c.dim, c.rate);
  RngStream rng(substream_seed(c.seed, "fd-check"));
  std::ostringstream csv;
  csv << "point,rank,delta,error,in_rank_error,tail,bound_term\n";
  bool pass = true;
  double worst_ratio = 0.0;
  double fitted = 0.0;
  std::vector<double> slopes;
  for (int pt = 0; pt < c.points; ++pt) {
    Eigen::VectorXd x(c.dim);
    for (int i = 0; i < c.dim; ++i) x[i] = rng.uniform(-1.0, 1.0);
    const auto rows = fd_error_sweep(g, x, c.ranks, c.deltas);
    // The constant is fitted on the smallest rank and checked on the rest.
    double constant = 0.0;
    for (const auto& row : rows) {
      if (row.rank == c.ranks.front()) constant = std::max(constant, row.error / (row.rank * row.delta + row.tail));
    }
    fitted = std::max(fitted, constant);
    for (int rank : c.ranks) {
      std::vector<double> ds, es;
      for (const auto& row : rows) {
        if (row.rank != rank) continue;
        ds.push_back(row.delta);
        es.push_back(row.in_rank_error);
      }
      const double slope = loglog_slope(ds, es);
      slopes.push_back(slope);
      pass = pass && slope >= 0.8 && slope <= 1.2;
    }
    for (const auto& row : rows) {
      const double bound = row.rank * row.delta + row.tail;
      csv << pt << "," << row.rank << "," << fmt(row.delta) << "," << fmt(row.error) << "," << fmt(row.in_rank_error)
          << "," << fmt(row.tail) << "," << fmt(bound) << "\n";
      const double ratio = row.error / (constant * bound);
      worst_ratio = std::max(worst_ratio, ratio);
      pass = pass && ratio <= 1.0 + 1e-9;
    }
  }
  write_file(out / "fd_check.csv", csv.str());
  write_file(out / "fd_check.json", dump({{"fitted_constant", fitted},
                                          {"worst_bound_ratio", worst_ratio},
                                          {"delta_slopes", slopes},
                                          {"pass", pass}}));
  log << "fd-check fitted constant " << fitted << " worst ratio " << worst_ratio << (pass ? " PASS" : " FAIL") << "\n";
  return pass ? kOk : kCheckFailed;
}

// ----------------------------------------------------------------- geo-equiv

struct GeoEquivConfig {
  int horizon = 10;
  int rank = 8;
  int ambient = 12;
  int instances = 1;
  std::string rule = "decay";
  double tolerance = 1e-12;
  std::uint64_t seed = 7;
};

int run_geo_equiv(const Invocation& inv, const fs::path& out, std::ostream& log) {
  const json j = optional_config(inv);
  std::vector<std::string> bad;
  GeoEquivConfig c;
  ProxFn f = ProxFn::box(-1.0, 1.0);
  JsonFields r(j, "", bad);
  r.get("horizon", c.horizon);
  r.get("rank", c.rank);
  r.get("ambient", c.ambient);
  r.get("instances", c.instances);
  r.get("rule", c.rule);
  r.get("tolerance", c.tolerance);
  r.get("seed", c.seed);
  if (r.has("prox")) {
    f = parse_prox(r.at("prox"), "prox", bad);
  } else {
    r.mark("prox");
  }
  r.reject_unknown();
  if (inv.seed) c.seed = *inv.seed;
  if (c.horizon < 0) bad.push_back("horizon");
  if (c.rank < 1) bad.push_back("rank");
  if (c.ambient < c.rank) bad.push_back("ambient");
  if (c.instances < 1) bad.push_back("instances");
  if (c.rule != "decay" && c.rule != "ramp") bad.push_back("rule");
  if (!f.pointwise() && f.kind != ProxKind::Zero) bad.push_back("prox");
  throw_if_bad(bad, "geo-equiv config");
  write_file(out / "config.resolved.json",
             dump({{"horizon", c.horizon}, {"rank", c.rank}, {"ambient", c.ambient}, {"instances", c.instances},
                   {"rule", c.rule}, {"tolerance", c.tolerance}, {"seed", c.seed}, {"prox", to_json(f)}}));

  RngStream rng(substream_seed(c.seed, "geo-equiv"));
  const BasisPtr ambient = Basis::standard(c.ambient);
  const BasisPtr reduced = Basis::standard(c.rank);
  double max_dev = 0.0;
  double max_tail = 0.0;
  std::ostringstream csv;
  csv << "instance,max_dev\n";
  for (int k = 0; k < c.instances; ++k) {
    Eigen::MatrixXd gm(c.ambient, c.ambient);
    for (int i = 0; i < c.ambient; ++i) {
      for (int m = 0; m < c.ambient; ++m) gm(i, m) = rng.normal();
    }
    const Eigen::MatrixXd a = gm.transpose() * gm / c.ambient + 0.1 * Eigen::MatrixXd::Identity(c.ambient, c.ambient);
    Eigen::VectorXd b(c.ambient);
    for (int i = 0; i < c.ambient; ++i) b[i] = rng.uniform(-2.0, 2.0);
    const ObjectiveG g = quadratic_objective(a, b, 0.0);
    const SplitSchedule s = c.rule == "decay" ? decay_schedule(c.horizon, 1.0, g.lipschitz(), c.rank)
                                              : ramp_schedule(c.horizon, g.lipschitz(), c.rank);
    Eigen::VectorXd z0 = Eigen::VectorXd::Zero(c.ambient);
    for (int i = 0; i < c.rank; ++i) z0[i] = rng.uniform(-0.5, 0.5);
    const Trajectory traj = run_scheme(CoeffVec(ambient, z0), s, f, g, Scheme::Projected);
    const GeoParams params = build_theoretical_geo(f, s, reduced);
    const Eigen::VectorXd y = geo_forward(params, g.restricted(c.rank), Eigen::VectorXd(z0.head(c.rank)));
    const Eigen::VectorXd& zl = traj.final().coeffs();
    const double dev = (y - zl.head(c.rank)).cwiseAbs().maxCoeff();
    const double tail = c.ambient > c.rank ? zl.tail(c.ambient - c.rank).cwiseAbs().maxCoeff() : 0.0;
    max_dev = std::max(max_dev, dev);
    max_tail = std::max(max_tail, tail);
    csv << k << "," << fmt(dev) << "\n";
  }
  const bool pass = max_dev <= c.tolerance && max_tail == 0.0;
  write_file(out / "geo_equiv.csv", csv.str());
  write_file(out / "geo_equiv.json", dump({{"max_dev", max_dev}, {"max_tail", max_tail}, {"tolerance", c.tolerance},
                                           {"pass", pass}}));
  log << "max_dev " << max_dev << (pass ? " <= " : " > ") << c.tolerance << ", " << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? kOk : kCheckFailed;
}

// ------------------------------------------------------------- train / eval

json eval_json(const EvalStats& s) {
  return {{"mse", s.mse}, {"median_rel_l2", s.median_rel_l2}, {"frac_within_0.15", s.frac_within}};
}

std::string predictions_csv(const Dataset& data, const EvalStats& s) {
  std::ostringstream csv;
  const int r = s.predictions.empty() ? 0 : static_cast<int>(s.predictions.front().size());
  csv << "instance";
  for (int i = 0; i < r; ++i) csv << ",pred" << i;
  for (int i = 0; i < r; ++i) csv << ",target" << i;
  csv << "\n";
  for (std::size_t k = 0; k < s.predictions.size(); ++k) {
    csv << k;
    for (int i = 0; i < r; ++i) csv << "," << fmt(s.predictions[k][i]);
    for (int i = 0; i < r; ++i) csv << "," << fmt(data.test[k].target[i]);
    csv << "\n";
  }
  return csv.str();
}

int run_train(const Invocation& inv, const fs::path& out, std::ostream& log) {
  if (!inv.config_path) throw ConfigError("train requires --config", {"--config"});
  const ExperimentConfig config = parse_config(*inv.config_path, inv.seed);
  write_file(out / "config.resolved.json", dump(to_json(config)));
  const Dataset data = make_dataset(config);
  log << "dataset: " << data.train.size() << " train / " << data.test.size() << " test instances\n";
  ExperimentResult result;
  try {
    result = run_experiment(config, data);
  } catch (const DivergenceError& e) {
    log << e.what() << "\n";
    return kCheckFailed;
  }
  std::ostringstream metrics;
  write_metrics_csv(metrics, result.metrics);
  write_file(out / "metrics.csv", metrics.str());
  write_file(out / "model.json", dump(to_json(result.params)));
  json summary = eval_json(result.test);
  summary["initial_test_mse"] = result.metrics.front().test_mse;
  summary["final_train_mse"] = result.metrics.back().train_mse;
  summary["epochs"] = config.epochs;
  write_file(out / "summary.json", dump(summary));
  write_file(out / "predictions.csv", predictions_csv(data, result.test));
  log << "final test MSE " << result.test.mse << "\n";
  return kOk;
}

int run_eval(const Invocation& inv, const fs::path& out, std::ostream& log) {
  if (!inv.config_path) throw ConfigError("eval requires --config", {"--config"});
  const ExperimentConfig config = parse_config(*inv.config_path, inv.seed);
  const std::string model_path = inv.model_path.value_or((out / "model.json").string());
  GeoParams params;
  try {
    params = geo_params_from_json(read_json_file(model_path));
  } catch (const json::exception& e) {
    throw ConfigError("malformed model '" + model_path + "': " + e.what(), {"model"});
  }
  const Dataset data = make_dataset(config);
  const EvalStats s = evaluate(params, data, data.test);
  json report = eval_json(s);
  report["model"] = fs::path(model_path).filename().string();
  if (config.family == Family::MinOp) {
    double gap = 0.0;
    for (const auto& inst : data.test) gap += loss_gap_eval(params, data, inst);
    report["mean_loss_gap"] = gap / static_cast<double>(data.test.size());
  }
  write_file(out / "eval.json", dump(report));
  write_file(out / "eval_predictions.csv", predictions_csv(data, s));
  log << "test MSE " << s.mse << "\n";
  return kOk;
}

// -------------------------------------------------------------------- report

std::vector<MetricsRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != "epoch,train_mse,test_mse") throw ConfigError("bad metrics header in '" + path.string() + "'", {"inputs"});
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricsRow row;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf", &row.epoch, &row.train_mse, &row.test_mse) != 3) {
      throw ConfigError("bad metrics row in '" + path.string() + "'", {"inputs"});
    }
    rows.push_back(row);
  }
  if (rows.empty()) throw ConfigError("empty metrics file '" + path.string() + "'", {"inputs"});
  return rows;
}

int run_report(const Invocation& inv, const fs::path& out, std::ostream& log) {
  std::vector<std::string> inputs;
  if (inv.config_path) {
    const json j = read_json_file(*inv.config_path);
    std::vector<std::string> bad;
    JsonFields r(j, "", bad);
    r.get("inputs", inputs);
    r.reject_unknown();
    throw_if_bad(bad, "report config");
  } else {
    std::error_code ec;
    for (fs::recursive_directory_iterator it(out, ec), end; !ec && it != end; it.increment(ec)) {
      if (it->is_regular_file() && it->path().filename() == "metrics.csv") inputs.push_back(it->path().string());
    }
    if (ec) throw IoError("cannot scan '" + out.string() + "'");
    std::sort(inputs.begin(), inputs.end());
  }
  if (inputs.empty()) throw IoError("report: no metrics.csv inputs found");

  json runs = json::array();
  std::vector<double> finals;
  for (const auto& path : inputs) {
    const auto rows = read_metrics(path);
    double best = rows.front().test_mse;
    for (const auto& row : rows) best = std::min(best, row.test_mse);
    const fs::path rel = fs::path(path).lexically_relative(out);
    runs.push_back({{"path", rel.empty() || rel.string().rfind("..", 0) == 0 ? path : rel.generic_string()},
                    {"final_epoch", rows.back().epoch},
                    {"initial_test_mse", rows.front().test_mse},
                    {"final_train_mse", rows.back().train_mse},
                    {"final_test_mse", rows.back().test_mse},
                    {"best_test_mse", best}});
    finals.push_back(rows.back().test_mse);
  }
  std::vector<double> sorted = finals;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  double mean = 0.0;
  for (double v : finals) mean += v;
  mean /= static_cast<double>(n);
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  write_file(out / "report.json",
             dump({{"runs", runs}, {"final_test_mse_mean", mean}, {"final_test_mse_median", median}}));
  log << "aggregated " << n << " runs\n";
  return kOk;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class NullBuffer : public std::streambuf {
 protected:
  int overflow(int c) override { return c; }
};

}  // namespace

ExperimentConfig parse_config(const std::string& path, std::optional<std::uint64_t> seed) {
  json j = read_json_file(path);
  if (seed && j.is_object()) j["seed"] = *seed;
  return config_from_json(j);
}

int dispatch(const Invocation& inv, std::ostream& log_stream, std::ostream& err) {
  NullBuffer null_buffer;
  std::ostream null_stream(&null_buffer);
  std::ostream& log = inv.quiet ? null_stream : log_stream;
  try {
    const fs::path out(inv.out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory '" + inv.out_dir + "'");
    int code = kOk;
    switch (inv.subcommand) {
      case Subcommand::ProxCheck: code = run_prox_check(inv, out, log); break;
      case Subcommand::Solve: code = run_solve(inv, out, log); break;
      case Subcommand::FdCheck: code = run_fd_check(inv, out, log); break;
      case Subcommand::GeoEquiv: code = run_geo_equiv(inv, out, log); break;
      case Subcommand::Train: code = run_train(inv, out, log); break;
      case Subcommand::Eval: code = run_eval(inv, out, log); break;
      case Subcommand::Report: code = run_report(inv, out, log); break;
    }
    json meta = {{"subcommand", to_string(inv.subcommand)}, {"timestamp", utc_timestamp()}, {"exit_code", code}};
    if (inv.config_path) meta["config"] = *inv.config_path;
    write_file(out / "meta.json", dump(meta));
    return code;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kParseError;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kParseError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
}

}  // namespace geoprox::cli
