#include "geoprox/geo.hpp"

#include "geo_detail.hpp"
#include "geoprox/rng.hpp"

#include <cmath>
#include <regex>
#include <stdexcept>

namespace geoprox {

NoiseSpec NoiseSpec::gaussian(double stddev, std::uint64_t seed) {
  if (!(stddev > 0.0)) throw std::invalid_argument("noise: gaussian stddev must be positive");
  return {Kind::Gaussian, stddev, seed};
}

CoeffVec sample_noise(const NoiseSpec& spec, const BasisPtr& basis, int rank) {
  if (spec.kind == NoiseSpec::Kind::Zero) return CoeffVec::zeros(basis, rank);
  if (!(spec.stddev > 0.0)) throw std::invalid_argument("noise: gaussian stddev must be positive");
  const CounterRng rng(spec.seed);
  Eigen::VectorXd c(rank);
  for (int j = 0; j < rank; ++j) c[j] = spec.stddev * rng.normal(static_cast<std::uint64_t>(j));
  return CoeffVec(basis, std::move(c));
}

GeoParams GeoParams::zeros(BasisPtr basis, int rank, int depth, int width, ProxFn prox, double tau) {
  GeoParams p;
  p.basis = std::move(basis);
  p.rank = rank;
  p.depth = depth;
  p.width = width;
  p.prox = prox;
  p.tau = tau;
  p.layers.resize(depth + 1);
  for (auto& layer : p.layers) {
    layer.A = Eigen::MatrixXd::Zero(rank, rank);
    layer.B = Eigen::MatrixXd::Zero(rank, width);
    layer.b = Eigen::VectorXd::Zero(rank);
    layer.gamma = 0.0;
    layer.samples.assign(width, Eigen::VectorXd::Zero(rank));
  }
  p.readout = Eigen::MatrixXd::Identity(rank, rank);
  p.validate();
  return p;
}

void GeoParams::validate() const {
  if (!basis) throw std::invalid_argument("GeoParams: missing basis");
  if (rank < 1 || rank > basis->max_rank()) throw std::invalid_argument("GeoParams: rank out of range");
  if (depth < 0 || width < 1) throw std::invalid_argument("GeoParams: depth must be >= 0 and width >= 1");
  if (layers.size() != static_cast<std::size_t>(depth) + 1) {
    throw std::invalid_argument("GeoParams: expected depth+1 layers");
  }
  if (!(tau > 0.0)) throw std::invalid_argument("GeoParams: tau must be positive");
  for (const auto& layer : layers) {
    if (layer.A.rows() != rank || layer.A.cols() != rank || layer.B.rows() != rank || layer.B.cols() != width ||
        layer.b.size() != rank || layer.samples.size() != static_cast<std::size_t>(width)) {
      throw std::invalid_argument("GeoParams: inconsistent layer dimensions");
    }
    for (const auto& s : layer.samples) {
      if (s.size() != rank) throw std::invalid_argument("GeoParams: sample point rank mismatch");
    }
    if (!(layer.gamma >= 0.0 && layer.gamma <= 1.0)) throw std::invalid_argument("GeoParams: gamma outside [0, 1]");
  }
  if (readout.rows() != rank || readout.cols() != rank) throw std::invalid_argument("GeoParams: readout shape");
}

namespace detail {

Eigen::VectorXd forward_layers(const GeoParams& params, const ObjectiveG& g, const Eigen::VectorXd& noise,
                               std::vector<LayerTrace>* trace) {
  const int rank = params.rank;
  const int width = params.width;
  if (noise.size() != rank) throw std::invalid_argument("geo_forward: noise rank must equal R");
  if (g.dim() != rank) throw std::invalid_argument("geo_forward: g must act on rank-R coefficients");
  const bool want_grads = trace != nullptr;
  if (want_grads && !g.has_gradient()) {
    throw std::invalid_argument("forward_record: g must supply an analytic gradient");
  }
  if (trace) trace->assign(params.layers.size(), {});

  Eigen::VectorXd x = noise;
  Eigen::VectorXd gvals(width);
  Eigen::VectorXd probe(rank);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const GeoLayer& layer = params.layers[l];
    LayerTrace* t = trace ? &(*trace)[l] : nullptr;
    if (t) t->ggrads.resize(width);
    for (int m = 0; m < width; ++m) {
      probe.noalias() = x + layer.samples[m];
      gvals[m] = g(probe);
      if (t) t->ggrads[m] = g.gradient(probe);
    }
    Eigen::VectorXd pre = layer.A * x;
    add_sample_term(pre, layer.B, gvals);
    pre += layer.b;
    Eigen::VectorXd act = prox_apply(params.prox, params.tau, *params.basis, pre);
    Eigen::VectorXd next = layer.gamma * x + (1.0 - layer.gamma) * act;
    if (t) {
      t->input = x;
      t->gvals = gvals;
      t->pre = std::move(pre);
      t->act = std::move(act);
    }
    x = std::move(next);
  }
  return x;
}

}  // namespace detail

Eigen::VectorXd geo_forward(const GeoParams& params, const ObjectiveG& g, const Eigen::VectorXd& noise) {
  return params.readout * detail::forward_layers(params, g, noise, nullptr);
}

CoeffVec geo_forward(const GeoParams& params, const ObjectiveG& g, const CoeffVec& noise) {
  if (noise.basis().id() != params.basis->id()) throw std::invalid_argument("geo_forward: noise basis mismatch");
  return CoeffVec(params.basis, geo_forward(params, g, noise.coeffs()));
}

GeoParams build_unrolled_geo(const ProxFn& f, const SplitSchedule& schedule, const BasisPtr& basis,
                             const NoiseSpec& noise, double tau) {
  const int rank = schedule.rank;
  const int horizon = schedule.horizon;
  const double delta = schedule.delta;
  GeoParams p = GeoParams::zeros(basis, rank, horizon, rank + 1, f, tau);
  p.noise = noise;
  for (int l = 0; l <= horizon; ++l) {
    GeoLayer& layer = p.layers[l];
    layer.A.setIdentity();
    for (int m = 0; m < rank; ++m) layer.samples[m][m] = delta;
    if (l == horizon) {
      layer.gamma = 1.0;
      continue;
    }
    const double scale = schedule.lambdas[l] / delta;
    for (int i = 0; i < rank; ++i) {
      layer.B(i, i) = -scale;
      layer.B(i, rank) = scale;
    }
    layer.gamma = 1.0 - schedule.alphas[l];
  }
  p.validate();
  return p;
}

GeoParams build_theoretical_geo(const ProxFn& f, const SplitSchedule& schedule, const BasisPtr& basis,
                                const NoiseSpec& noise, double tau) {
  if (!schedule.decay_compliant() && !schedule.ramp_compliant()) {
    throw std::invalid_argument("build_theoretical_geo: schedule is not decay-compliant");
  }
  return build_unrolled_geo(f, schedule, basis, noise, tau);
}

std::size_t count_params(const GeoParams& params) {
  const std::size_t r = params.rank;
  const std::size_t m = params.width;
  const std::size_t layers = params.depth + 1;
  return layers * (r * r + r * m + r + 1) + r * r + layers * m * r;
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  nlohmann::json out = nlohmann::json::array();
  for (double x : v) out.push_back(x);
  return out;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw std::invalid_argument(std::string("GeoParams json: bad shape for ") + what);
  }
  Eigen::MatrixXd a(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != cols) {
      throw std::invalid_argument(std::string("GeoParams json: bad shape for ") + what);
    }
    for (Eigen::Index k = 0; k < cols; ++k) a(i, k) = j[i][k].get<double>();
  }
  return a;
}

Eigen::VectorXd vector_from(const nlohmann::json& j, Eigen::Index n, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n) {
    throw std::invalid_argument(std::string("GeoParams json: bad length for ") + what);
  }
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = j[i].get<double>();
  return v;
}

// JSON has no infinities; unbounded box sides serialize as null.
nlohmann::json bound_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const ProxFn& f) {
  nlohmann::json j;
  switch (f.kind) {
    case ProxKind::Zero:
      j["kind"] = "zero";
      break;
    case ProxKind::Box:
      j["kind"] = "box";
      j["lo"] = bound_json(f.lo);
      j["hi"] = bound_json(f.hi);
      break;
    case ProxKind::L1:
      j["kind"] = "l1";
      j["weight"] = f.weight;
      break;
    case ProxKind::Quadratic:
      j["kind"] = "quadratic";
      j["c"] = f.c;
      break;
    case ProxKind::Reaction:
      j["kind"] = "reaction";
      j["stated_form"] = f.stated_form;
      break;
  }
  return j;
}

ProxFn prox_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (kind == "zero") return ProxFn::zero();
  if (kind == "box") {
    const double lo = j.contains("lo") && !j["lo"].is_null() ? j["lo"].get<double>() : -inf;
    const double hi = j.contains("hi") && !j["hi"].is_null() ? j["hi"].get<double>() : inf;
    return ProxFn::box(lo, hi);
  }
  if (kind == "l1") return ProxFn::l1(j.value("weight", 1.0));
  if (kind == "quadratic") return ProxFn::quadratic(j.value("c", 1.0));
  if (kind == "reaction") return ProxFn::reaction(j.value("stated_form", false));
  throw std::invalid_argument("unknown prox kind '" + kind + "'");
}

BasisPtr basis_from_id(const std::string& id) {
  std::smatch m;
  static const std::regex standard_re(R"(standard:d=(\d+):R=(\d+))");
  static const std::regex hermite_re(R"(hermite:R=(\d+):N=(\d+))");
  if (std::regex_match(id, m, standard_re)) return Basis::standard(std::stoi(m[1]), std::stoi(m[2]));
  if (std::regex_match(id, m, hermite_re)) return Basis::hermite(std::stoi(m[1]), std::stoi(m[2]));
  throw std::invalid_argument("unknown basis id '" + id + "'");
}

nlohmann::json to_json(const GeoParams& params) {
  nlohmann::json j;
  j["basis"] = params.basis->id();
  j["rank"] = params.rank;
  j["depth"] = params.depth;
  j["width"] = params.width;
  j["prox"] = to_json(params.prox);
  j["tau"] = params.tau;
  j["noise"] = {{"kind", params.noise.kind == NoiseSpec::Kind::Zero ? "zero" : "gaussian"},
                {"stddev", params.noise.stddev},
                {"seed", params.noise.seed}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : params.layers) {
    nlohmann::json lj;
    lj["A"] = matrix_json(layer.A);
    lj["B"] = matrix_json(layer.B);
    lj["b"] = vector_json(layer.b);
    lj["gamma"] = layer.gamma;
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : layer.samples) samples.push_back(vector_json(s));
    lj["samples"] = std::move(samples);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  j["readout"] = matrix_json(params.readout);
  return j;
}

GeoParams geo_params_from_json(const nlohmann::json& j) {
  GeoParams p;
  p.basis = basis_from_id(j.at("basis").get<std::string>());
  p.rank = j.at("rank").get<int>();
  p.depth = j.at("depth").get<int>();
  p.width = j.at("width").get<int>();
  p.prox = prox_from_json(j.at("prox"));
  p.tau = j.at("tau").get<double>();
  const auto& nj = j.at("noise");
  p.noise.kind = nj.at("kind").get<std::string>() == "gaussian" ? NoiseSpec::Kind::Gaussian : NoiseSpec::Kind::Zero;
  p.noise.stddev = nj.at("stddev").get<double>();
  p.noise.seed = nj.at("seed").get<std::uint64_t>();
  const auto& lj = j.at("layers");
  if (!lj.is_array() || lj.size() != static_cast<std::size_t>(p.depth) + 1) {
    throw std::invalid_argument("GeoParams json: expected depth+1 layers");
  }
  for (const auto& l : lj) {
    GeoLayer layer;
    layer.A = matrix_from(l.at("A"), p.rank, p.rank, "A");
    layer.B = matrix_from(l.at("B"), p.rank, p.width, "B");
    layer.b = vector_from(l.at("b"), p.rank, "b");
    layer.gamma = l.at("gamma").get<double>();
    const auto& sj = l.at("samples");
    if (!sj.is_array() || sj.size() != static_cast<std::size_t>(p.width)) {
      throw std::invalid_argument("GeoParams json: expected width sample points");
    }
    for (const auto& s : sj) layer.samples.push_back(vector_from(s, p.rank, "samples"));
    p.layers.push_back(std::move(layer));
  }
  p.readout = matrix_from(j.at("readout"), p.rank, p.rank, "readout");
  p.validate();
  return p;
}

}  // namespace geoprox
