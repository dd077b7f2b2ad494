#include "geoprox/experiments.hpp"

#include "geoprox/rng.hpp"
#include "geo_detail.hpp"
#include "json_fields.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace geoprox {

std::string to_string(Family family) { return family == Family::MinOp ? "min-op" : "pde-rd"; }
std::string to_string(InitKind init) { return init == InitKind::Random ? "random" : "theoretical"; }

ExperimentConfig ExperimentConfig::defaults(Family family) {
  ExperimentConfig c;
  c.family = family;
  if (family == Family::PdeRd) {
    c.rank = 8;
    c.depth = 10;
    c.width = 20;
    c.epochs = 4000;
    c.lr = 1e-4;
    c.batch_size = 10;
    c.n_train = 100;
    c.n_test = 25;
    c.eval_interval = 250;
  }
  return c;
}

void ExperimentConfig::validate() const {
  std::vector<std::string> bad;
  if (rank < 1) bad.push_back("rank");
  if (depth < 0) bad.push_back("depth");
  if (width < 1) bad.push_back("width");
  if (epochs < 0) bad.push_back("epochs");
  if (!(lr > 0.0) || !std::isfinite(lr)) bad.push_back("lr");
  if (batch_size < 1) bad.push_back("batch_size");
  if (n_train < 1) bad.push_back("n_train");
  if (n_test < 1) bad.push_back("n_test");
  if (eval_interval < 1) bad.push_back("eval_interval");
  if (!(init_delta > 0.0)) bad.push_back("init_delta");
  if (!(noise_stddev >= 0.0)) bad.push_back("noise_stddev");
  if (family == Family::MinOp) {
    if (minop.dim < 1) bad.push_back("minop.dim");
    if (rank > minop.dim) bad.push_back("rank");
    if (!(minop.box_lo < minop.box_hi)) bad.push_back("minop.box_lo");
    if (minop.oracle_steps < 1) bad.push_back("minop.oracle_steps");
    if (init == InitKind::Theoretical && width < rank + 1) bad.push_back("width");
  } else {
    if (!(pde.nu_lo > 0.0)) bad.push_back("pde.nu_lo");
    if (!(pde.nu_hi > pde.nu_lo)) bad.push_back("pde.nu_hi");
    if (!(pde.horizon > 0.0)) bad.push_back("pde.horizon");
    if (!(pde.grid_lo < pde.grid_hi)) bad.push_back("pde.grid_lo");
    if (pde.grid_points < 3) bad.push_back("pde.grid_points");
    if (pde.time_steps < 100) bad.push_back("pde.time_steps");
    if (init == InitKind::Theoretical && (width < rank + 1 || depth < 1)) bad.push_back("width");
  }
  if (!bad.empty()) {
    std::sort(bad.begin(), bad.end());
    bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
    std::string msg = "invalid config values:";
    for (const auto& k : bad) msg += " " + k;
    throw ConfigError(msg, bad);
  }
}

using nlohmann::json;
using detail::JsonFields;

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object", {"<root>"});
  std::vector<std::string> bad;
  if (!j.contains("family")) throw ConfigError("config is missing family", {"family"});
  Family family = Family::MinOp;
  const json& fam = j.at("family");
  if (fam == "min-op") {
    family = Family::MinOp;
  } else if (fam == "pde-rd") {
    family = Family::PdeRd;
  } else {
    throw ConfigError("family must be \"min-op\" or \"pde-rd\"", {"family"});
  }

  ExperimentConfig c = ExperimentConfig::defaults(family);
  JsonFields r(j, "", bad);
  std::string family_name;
  r.get("family", family_name);
  r.get("seed", c.seed);
  r.get("rank", c.rank);
  r.get("depth", c.depth);
  r.get("width", c.width);
  r.get("epochs", c.epochs);
  r.get("lr", c.lr);
  r.get("batch_size", c.batch_size);
  r.get("n_train", c.n_train);
  r.get("n_test", c.n_test);
  r.get("eval_interval", c.eval_interval);
  std::string init = to_string(c.init);
  r.get("init", init);
  if (init == "random") {
    c.init = InitKind::Random;
  } else if (init == "theoretical") {
    c.init = InitKind::Theoretical;
  } else {
    bad.push_back("init");
  }
  r.get("init_delta", c.init_delta);
  r.get("noise_stddev", c.noise_stddev);
  r.get("train_samples", c.train_samples);
  r.get("train_gates", c.train_gates);

  const char* own = family == Family::MinOp ? "minop" : "pde";
  const char* other = family == Family::MinOp ? "pde" : "minop";
  if (j.contains(other)) bad.push_back(other);
  r.mark(other);
  if (r.has(own)) {
    const json& sub = r.at(own);
    if (!sub.is_object()) {
      bad.push_back(own);
    } else {
      JsonFields s(sub, std::string(own) + ".", bad);
      if (family == Family::MinOp) {
        s.get("dim", c.minop.dim);
        s.get("box_lo", c.minop.box_lo);
        s.get("box_hi", c.minop.box_hi);
        s.get("oracle_steps", c.minop.oracle_steps);
      } else {
        s.get("nu_lo", c.pde.nu_lo);
        s.get("nu_hi", c.pde.nu_hi);
        s.get("horizon", c.pde.horizon);
        s.get("grid_lo", c.pde.grid_lo);
        s.get("grid_hi", c.pde.grid_hi);
        s.get("grid_points", c.pde.grid_points);
        s.get("time_steps", c.pde.time_steps);
      }
      s.reject_unknown();
    }
  }
  r.reject_unknown();

  try {
    c.validate();
  } catch (const ConfigError& e) {
    bad.insert(bad.end(), e.fields.begin(), e.fields.end());
  }
  if (!bad.empty()) {
    std::sort(bad.begin(), bad.end());
    bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
    std::string msg = "config rejected; offending keys:";
    for (const auto& k : bad) msg += " " + k;
    throw ConfigError(msg, bad);
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["family"] = to_string(c.family);
  j["seed"] = c.seed;
  j["rank"] = c.rank;
  j["depth"] = c.depth;
  j["width"] = c.width;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["eval_interval"] = c.eval_interval;
  j["init"] = to_string(c.init);
  j["init_delta"] = c.init_delta;
  j["noise_stddev"] = c.noise_stddev;
  j["train_samples"] = c.train_samples;
  j["train_gates"] = c.train_gates;
  if (c.family == Family::MinOp) {
    j["minop"] = {{"dim", c.minop.dim},
                  {"box_lo", c.minop.box_lo},
                  {"box_hi", c.minop.box_hi},
                  {"oracle_steps", c.minop.oracle_steps}};
  } else {
    j["pde"] = {{"nu_lo", c.pde.nu_lo},         {"nu_hi", c.pde.nu_hi},         {"horizon", c.pde.horizon},
                {"grid_lo", c.pde.grid_lo},     {"grid_hi", c.pde.grid_hi},     {"grid_points", c.pde.grid_points},
                {"time_steps", c.pde.time_steps}};
  }
  return j;
}

GSpec GSpec::quadratic(Eigen::MatrixXd a, Eigen::VectorXd b, double c) {
  GSpec s;
  s.kind = Kind::Quadratic;
  s.a = std::move(a);
  s.b = std::move(b);
  s.c = c;
  return s;
}

GSpec GSpec::log_sum_exp(Eigen::VectorXd b, double c) {
  GSpec s;
  s.kind = Kind::LogSumExp;
  s.b = std::move(b);
  s.c = c;
  return s;
}

GSpec GSpec::diffusion(double nu) {
  if (!(nu > 0.0)) throw std::invalid_argument("diffusion: nu must be positive");
  GSpec s;
  s.kind = Kind::Diffusion;
  s.nu = nu;
  return s;
}

namespace {

// d/du maps E_R into E_{R+1}; keeping the extra row makes ||D z|| exact.
Eigen::MatrixXd diffusion_matrix(const Basis& basis, int rank, double nu) {
  const Eigen::MatrixXd d = derivative_matrix(basis, rank + 1).leftCols(rank);
  return nu * (d.transpose() * d);
}

}  // namespace

std::optional<QuadraticForm> quadratic_form(const GSpec& spec, const Basis& basis, int rank) {
  switch (spec.kind) {
    case GSpec::Kind::Quadratic:
      return QuadraticForm{spec.a, spec.b, spec.c};
    case GSpec::Kind::Diffusion:
      return QuadraticForm{diffusion_matrix(basis, rank, spec.nu), Eigen::VectorXd::Zero(rank), 0.0};
    case GSpec::Kind::LogSumExp:
      return std::nullopt;
  }
  return std::nullopt;
}

ObjectiveG make_objective(const GSpec& spec, const Basis& basis, int rank) {
  if (spec.kind == GSpec::Kind::LogSumExp) return log_sum_exp_objective(spec.b, spec.c);
  const QuadraticForm q = *quadratic_form(spec, basis, rank);
  return quadratic_objective(q.Q, q.q, q.q0);
}

Dataset gen_minop_dataset(const ExperimentConfig& config) {
  if (config.family != Family::MinOp) throw std::invalid_argument("gen_minop_dataset: family must be min-op");
  const int d = config.minop.dim;
  Dataset data;
  data.basis = Basis::standard(d);
  data.prox = ProxFn::box(config.minop.box_lo, config.minop.box_hi);
  const CoeffVec x0 = CoeffVec::zeros(data.basis, d);
  const int r = config.rank;

  auto label = [&](GSpec spec) {
    const ObjectiveG g = make_objective(spec, *data.basis, d);
    const CoeffVec argmin = reference_minimizer(x0, data.prox, g, config.minop.oracle_steps);
    return LabeledInstance{std::move(spec), project(argmin, r)};
  };

  RngStream train_rng(substream_seed(config.seed, "dataset/train"));
  for (int k = 0; k < config.n_train; ++k) {
    Eigen::MatrixXd gm(d, d);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) gm(i, j) = train_rng.normal();
    }
    Eigen::MatrixXd a = gm.transpose() * gm + 0.1 * Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd b(d);
    for (int i = 0; i < d; ++i) b[i] = train_rng.uniform(-2.0, 2.0);
    const double c = train_rng.uniform(-2.0, 2.0);
    data.train.push_back(label(GSpec::quadratic(std::move(a), std::move(b), c)));
  }

  RngStream test_rng(substream_seed(config.seed, "dataset/test"));
  for (int k = 0; k < config.n_test; ++k) {
    const double sign = test_rng.coin() ? 1.0 : -1.0;
    Eigen::VectorXd b(d);
    for (int i = 0; i < d; ++i) b[i] = sign * test_rng.uniform(0.0, 2.0);
    const double c = test_rng.uniform(0.0, 2.0);
    data.test.push_back(label(GSpec::log_sum_exp(std::move(b), c)));
  }
  return data;
}

double pde_initial(double u) { return 5.0 * u * std::exp(-u * u); }

GridFn pde_reference(double nu, double horizon, const std::vector<double>& nodes, int steps, bool reaction) {
  if (!(nu > 0.0) || !(horizon > 0.0)) throw std::invalid_argument("pde_reference: nu and horizon must be positive");
  if (steps < 100) throw std::invalid_argument("pde_reference: needs at least 100 time steps");
  const std::size_t n = nodes.size();
  if (n < 3) throw std::invalid_argument("pde_reference: grid needs at least 3 nodes");
  const double h = (nodes.back() - nodes.front()) / static_cast<double>(n - 1);
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs(nodes[i] - nodes[i - 1] - h) > 1e-9 * std::max(1.0, std::abs(h))) {
      throw std::invalid_argument("pde_reference: grid must be uniform");
    }
  }

  const double dt = horizon / steps;
  const double r = nu * dt / (h * h);
  // Interior unknowns 1..n-2; the Thomas sweep coefficients are step-invariant.
  const std::size_t m = n - 2;
  const double diag = 1.0 + r;
  const double off = -0.5 * r;
  std::vector<double> cprime(m), denom(m);
  for (std::size_t i = 0; i < m; ++i) {
    denom[i] = diag - (i > 0 ? off * cprime[i - 1] : 0.0);
    cprime[i] = off / denom[i];
  }

  std::vector<double> y(n), rhs(m);
  for (std::size_t i = 0; i < n; ++i) y[i] = pde_initial(nodes[i]);
  y.front() = 0.0;
  y.back() = 0.0;
  double peak0 = 0.0;
  for (double v : y) peak0 = std::max(peak0, std::abs(v));
  const double shrink = 1.0 / (1.0 + 0.5 * dt);

  for (int s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < m; ++i) {
      rhs[i] = (1.0 - r) * y[i + 1] + 0.5 * r * (y[i] + y[i + 2]);
    }
    // Forward elimination then back substitution.
    rhs[0] /= denom[0];
    for (std::size_t i = 1; i < m; ++i) rhs[i] = (rhs[i] - off * rhs[i - 1]) / denom[i];
    for (std::size_t i = m - 1; i-- > 0;) rhs[i] -= cprime[i] * rhs[i + 1];
    double peak = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double v = rhs[i];
      if (reaction && v < 0.0) v *= shrink;
      y[i + 1] = v;
      peak = std::max(peak, std::abs(v));
    }
    if (!(peak <= 10.0 * peak0)) throw std::runtime_error("pde_reference: solution grew beyond 10x its initial size");
  }
  return GridFn(nodes, std::move(y));
}

BasisPtr pde_basis(int rank) { return Basis::hermite(2 * rank); }

namespace {

std::vector<double> pde_grid(const PdeParams& p) { return uniform_grid(p.grid_lo, p.grid_hi, p.grid_points); }

}  // namespace

double pde_truncation_ratio(const ExperimentConfig& config, double nu) {
  const BasisPtr basis = pde_basis(config.rank);
  const GridFn y = pde_reference(nu, config.pde.horizon, pde_grid(config.pde), config.pde.time_steps);
  const Eigen::VectorXd c = encode(y, basis, 2 * config.rank).coeffs();
  const double total = c.squaredNorm();
  return c.tail(config.rank).squaredNorm() / total;
}

Dataset gen_pde_dataset(const ExperimentConfig& config) {
  if (config.family != Family::PdeRd) throw std::invalid_argument("gen_pde_dataset: family must be pde-rd");
  Dataset data;
  data.basis = pde_basis(config.rank);
  data.prox = ProxFn::reaction();
  const std::vector<double> grid = pde_grid(config.pde);
  auto label = [&](double nu) {
    const GridFn y = pde_reference(nu, config.pde.horizon, grid, config.pde.time_steps);
    return LabeledInstance{GSpec::diffusion(nu), encode(y, data.basis, config.rank)};
  };
  RngStream train_rng(substream_seed(config.seed, "dataset/train"));
  for (int k = 0; k < config.n_train; ++k) data.train.push_back(label(train_rng.uniform(config.pde.nu_lo, config.pde.nu_hi)));
  RngStream test_rng(substream_seed(config.seed, "dataset/test"));
  for (int k = 0; k < config.n_test; ++k) data.test.push_back(label(test_rng.uniform(config.pde.nu_lo, config.pde.nu_hi)));
  return data;
}

Dataset make_dataset(const ExperimentConfig& config) {
  config.validate();
  return config.family == Family::MinOp ? gen_minop_dataset(config) : gen_pde_dataset(config);
}

double family_tau(const ExperimentConfig& config) {
  // The reaction activation advances the nonlinearity by one layer's share of T.
  return config.family == Family::PdeRd ? config.pde.horizon / std::max(config.depth, 1) : 1.0;
}

GeoParams init_params(const ExperimentConfig& config, const Dataset& data) {
  config.validate();
  const int r = config.rank;
  const int m = config.width;
  const double delta = config.init_delta;
  const double tau = family_tau(config);
  NoiseSpec noise = config.noise_stddev > 0.0
                        ? NoiseSpec::gaussian(config.noise_stddev, substream_seed(config.seed, "noise"))
                        : NoiseSpec::zero(substream_seed(config.seed, "noise"));
  RngStream rng(substream_seed(config.seed, "init"));

  GeoParams p = GeoParams::zeros(data.basis, r, config.depth, m, data.prox, tau);
  p.noise = noise;
  // Sample points: delta e_i, then the zero point, then delta-scaled Gaussian directions.
  for (auto& layer : p.layers) {
    for (int k = 0; k < m; ++k) {
      Eigen::VectorXd s = Eigen::VectorXd::Zero(r);
      if (k < r) {
        s[k] = delta;
      } else if (k > r) {
        for (int i = 0; i < r; ++i) s[i] = delta * rng.normal();
      }
      layer.samples[k] = std::move(s);
    }
  }

  if (config.init == InitKind::Random) {
    for (auto& layer : p.layers) {
      for (int j = 0; j < r; ++j) {
        for (int i = 0; i < r; ++i) layer.A(i, j) = (i == j ? 1.0 : 0.0) + 0.01 * rng.normal();
      }
      for (int j = 0; j < m; ++j) {
        for (int i = 0; i < r; ++i) layer.B(i, j) = 0.01 * rng.normal();
      }
      layer.gamma = 0.5;
    }
    p.validate();
    return p;
  }

  // Unrolled splitting weights: B combines delta e_i (columns 0..R-1) with
  // the zero point (column R) into -lambda times the divided difference.
  double lam = 0.0;
  if (config.family == Family::MinOp) {
    double lip = 0.0;
    for (const auto& inst : data.train) lip = std::max(lip, make_objective(inst.g, *data.basis, r).lipschitz());
    lam = 0.5 / lip;
  } else {
    lam = config.pde.horizon / std::max(config.depth - 1, 1);
  }
  for (int l = 0; l <= config.depth; ++l) {
    GeoLayer& layer = p.layers[l];
    layer.A.setIdentity();
    if (l == config.depth) {
      layer.gamma = 1.0;
      continue;
    }
    for (int i = 0; i < r; ++i) {
      layer.B(i, i) = -lam / delta;
      layer.B(i, r) = lam / delta;
    }
    layer.gamma = 0.0;
  }
  if (config.family == Family::PdeRd) {
    // Layer 0 injects the initial datum; later layers advance it.
    GeoLayer& first = p.layers[0];
    first.A.setZero();
    first.B.setZero();
    first.b = encode(std::function<double(double)>(pde_initial), data.basis, r).coeffs();
  }
  p.validate();
  return p;
}

namespace {

struct QuadWorkspace {
  std::vector<Eigen::VectorXd> x, r, gvals, pre, act;
  std::vector<Eigen::MatrixXd> qs;
  Eigen::VectorXd h, xbar, abar, pbar, vbar, tmp;
};

bool inline_prox(const GeoParams& p) { return p.prox.pointwise() && !p.basis->is_hermite(); }

// Forward and backward of one quadratic instance; sampling uses
// g(x + s) = g(x) + <Qx + q, s> + s^T Q s / 2 and grad g(x + s) = Qx + q + Q s.
double quad_pass(const GeoParams& p, const std::vector<Eigen::MatrixXd>& samples, const QuadraticForm& qf,
                 const Eigen::VectorXd& noise, const Eigen::VectorXd& target, double seed_scale, GeoParams* grads,
                 QuadWorkspace& w) {
  const std::size_t nl = p.layers.size();
  const int width = p.width;
  w.x.resize(nl + 1);
  w.r.resize(nl);
  w.gvals.resize(nl);
  w.pre.resize(nl);
  w.act.resize(nl);
  w.qs.resize(nl);
  w.x[0] = noise;
  const bool inline_f = inline_prox(p);
  for (std::size_t l = 0; l < nl; ++l) {
    const GeoLayer& layer = p.layers[l];
    const Eigen::VectorXd& x = w.x[l];
    w.r[l].noalias() = qf.Q * x;
    const double g0 = 0.5 * x.dot(w.r[l]) + qf.q.dot(x) + qf.q0;
    w.r[l] += qf.q;
    w.qs[l].noalias() = qf.Q * samples[l];
    w.gvals[l].resize(width);
    for (int m = 0; m < width; ++m) {
      w.gvals[l][m] = g0 + samples[l].col(m).dot(w.r[l]) + 0.5 * samples[l].col(m).dot(w.qs[l].col(m));
    }
    w.pre[l].noalias() = layer.A * x;
    detail::add_sample_term(w.pre[l], layer.B, w.gvals[l]);
    w.pre[l] += layer.b;
    if (inline_f) {
      w.act[l].resize(p.rank);
      for (int i = 0; i < p.rank; ++i) w.act[l][i] = prox_scalar(p.prox, p.tau, w.pre[l][i]);
    } else {
      w.act[l] = prox_apply(p.prox, p.tau, *p.basis, w.pre[l]);
    }
    w.x[l + 1] = layer.gamma * x + (1.0 - layer.gamma) * w.act[l];
  }
  const Eigen::VectorXd out = p.readout * w.x[nl];
  const Eigen::VectorXd err = out - target;
  const double sq = err.squaredNorm();
  if (!grads) return sq;

  const Eigen::VectorXd seed = seed_scale * 2.0 * err;
  grads->readout.noalias() += seed * w.x[nl].transpose();
  w.xbar.noalias() = p.readout.transpose() * seed;
  for (std::size_t l = nl; l-- > 0;) {
    const GeoLayer& layer = p.layers[l];
    GeoLayer& gl = grads->layers[l];
    const Eigen::VectorXd& x = w.x[l];
    gl.gamma += w.xbar.dot(x - w.act[l]);
    w.abar = (1.0 - layer.gamma) * w.xbar;
    if (inline_f) {
      w.pbar.resize(p.rank);
      for (int i = 0; i < p.rank; ++i) w.pbar[i] = prox_scalar_derivative(p.prox, p.tau, w.pre[l][i]) * w.abar[i];
    } else {
      w.pbar = prox_vjp(p.prox, p.tau, *p.basis, w.pre[l], w.abar);
    }
    gl.A.noalias() += w.pbar * x.transpose();
    gl.B.noalias() += w.pbar * w.gvals[l].transpose();
    gl.b += w.pbar;
    w.vbar.noalias() = layer.B.transpose() * w.pbar;
    w.tmp.noalias() = layer.A.transpose() * w.pbar;
    w.tmp += layer.gamma * w.xbar;
    w.tmp += w.vbar.sum() * w.r[l];
    w.tmp.noalias() += w.qs[l] * w.vbar;
    for (int m = 0; m < width; ++m) {
      if (w.vbar[m] != 0.0) gl.samples[m] += w.vbar[m] * (w.r[l] + w.qs[l].col(m));
    }
    std::swap(w.xbar, w.tmp);
  }
  return sq;
}

Eigen::VectorXd noise_vector(const GeoParams& p) { return sample_noise(p.noise, p.basis, p.rank).coeffs(); }

}  // namespace

double batch_loss(const GeoParams& params, const Dataset& data, const std::vector<LabeledInstance>& set,
                  const std::vector<std::size_t>& indices, GeoParams* grads) {
  if (indices.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const double scale = 1.0 / static_cast<double>(indices.size());
  const Eigen::VectorXd noise = noise_vector(params);
  std::vector<Eigen::MatrixXd> samples(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    samples[l].resize(params.rank, params.width);
    for (int m = 0; m < params.width; ++m) samples[l].col(m) = params.layers[l].samples[m];
  }
  QuadWorkspace w;
  double total = 0.0;
  for (std::size_t idx : indices) {
    const LabeledInstance& inst = set.at(idx);
    const Eigen::VectorXd& target = inst.target.coeffs();
    const auto qf = quadratic_form(inst.g, *data.basis, params.rank);
    if (qf) {
      total += quad_pass(params, samples, *qf, noise, target, scale, grads, w);
      continue;
    }
    const ObjectiveG g = make_objective(inst.g, *data.basis, params.rank);
    if (!grads) {
      total += (geo_forward(params, g, noise) - target).squaredNorm();
      continue;
    }
    const Recording rec = forward_record(params, g, noise);
    const Eigen::VectorXd err = rec.output - target;
    total += err.squaredNorm();
    const GeoParams gi = backward(rec.tape, scale * 2.0 * err);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      GeoLayer& dst = grads->layers[l];
      const GeoLayer& src = gi.layers[l];
      dst.A += src.A;
      dst.B += src.B;
      dst.b += src.b;
      dst.gamma += src.gamma;
      for (int m = 0; m < params.width; ++m) dst.samples[m] += src.samples[m];
    }
    grads->readout += gi.readout;
  }
  return total * scale;
}

EvalStats evaluate(const GeoParams& params, const Dataset& data, const std::vector<LabeledInstance>& set,
                   double sup_tolerance) {
  EvalStats s;
  if (set.empty()) return s;
  const Eigen::VectorXd noise = noise_vector(params);
  std::vector<double> rel;
  std::size_t within = 0;
  double total = 0.0;
  for (const auto& inst : set) {
    const ObjectiveG g = make_objective(inst.g, *data.basis, params.rank);
    Eigen::VectorXd out = geo_forward(params, g, noise);
    const Eigen::VectorXd err = out - inst.target.coeffs();
    total += err.squaredNorm();
    const double tn = inst.target.coeffs().norm();
    rel.push_back(tn > 0.0 ? err.norm() / tn : err.norm());
    if (err.cwiseAbs().maxCoeff() <= sup_tolerance) ++within;
    s.predictions.push_back(std::move(out));
  }
  s.mse = total / static_cast<double>(set.size());
  s.frac_within = static_cast<double>(within) / static_cast<double>(set.size());
  std::sort(rel.begin(), rel.end());
  const std::size_t n = rel.size();
  s.median_rel_l2 = n % 2 ? rel[n / 2] : 0.5 * (rel[n / 2 - 1] + rel[n / 2]);
  return s;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& data) {
  config.validate();
  ExperimentResult result;
  GeoParams params = init_params(config, data);
  ParamMask mask;
  mask.gamma = config.train_gates;
  mask.samples = config.train_samples;
  const ParamLayout layout(params, mask);
  AdamState adam = AdamState::for_size(layout.size(), config.lr);

  std::vector<std::size_t> all_train(data.train.size()), all_test(data.test.size());
  std::iota(all_train.begin(), all_train.end(), std::size_t{0});
  std::iota(all_test.begin(), all_test.end(), std::size_t{0});

  auto record = [&](int epoch) {
    MetricsRow row{epoch, batch_loss(params, data, data.train, all_train, nullptr),
                   batch_loss(params, data, data.test, all_test, nullptr)};
    result.metrics.push_back(row);
    return row;
  };
  const double initial = record(0).train_mse;

  const std::uint64_t shuffle_root = substream_seed(config.seed, "shuffle");
  std::vector<std::size_t> order = all_train;
  std::vector<std::size_t> batch;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    RngStream shuffle(mix64(shuffle_root + static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[shuffle.bits() % (i + 1)]);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(stop));
      GeoParams grads = GeoParams::zeros(params.basis, params.rank, params.depth, params.width, params.prox, params.tau);
      grads.readout.setZero();  // zeros() seeds an identity readout
      const double loss = batch_loss(params, data, data.train, batch, &grads);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged: non-finite batch loss at epoch " + std::to_string(epoch));
      }
      adam_step(params, grads, adam, layout);
    }
    if (epoch % config.eval_interval == 0 || epoch == config.epochs) {
      const MetricsRow row = record(epoch);
      if (!(row.train_mse <= 1e3 * initial)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "training diverged at epoch %d: train MSE %.6g exceeds 1e3 x initial %.6g",
                      epoch, row.train_mse, initial);
        throw DivergenceError(buf);
      }
    }
  }
  result.test = evaluate(params, data, data.test);
  result.params = std::move(params);
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config) { return run_experiment(config, make_dataset(config)); }

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "epoch,train_mse,test_mse\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", r.epoch, r.train_mse, r.test_mse);
    os << buf;
  }
}

double loss_gap_eval(const GeoParams& params, const Dataset& data, const LabeledInstance& instance) {
  const ObjectiveG g = make_objective(instance.g, *data.basis, params.rank);
  const Eigen::VectorXd out = geo_forward(params, g, noise_vector(params));
  const Eigen::VectorXd& best = instance.target.coeffs();
  return (fn_value(params.prox, *params.basis, out) + g(out)) - (fn_value(params.prox, *params.basis, best) + g(best));
}

}  // namespace geoprox
