#pragma once

#include "geoprox/hilbert.hpp"
#include "geoprox/prox.hpp"
#include "geoprox/splitting.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace geoprox {

struct NoiseSpec {
  enum class Kind { Zero, Gaussian };
  Kind kind = Kind::Zero;
  double stddev = 1.0;
  std::uint64_t seed = 0;

  static NoiseSpec zero(std::uint64_t seed = 0) { return {Kind::Zero, 1.0, seed}; }
  static NoiseSpec gaussian(double stddev, std::uint64_t seed);
};

/// Draws x^{(0)}. Coefficient j of a Gaussian draw is the j-th normal of the
/// counter-based stream keyed by the seed.
CoeffVec sample_noise(const NoiseSpec& spec, const BasisPtr& basis, int rank);

struct GeoLayer {
  Eigen::MatrixXd A;  // rank x rank
  Eigen::MatrixXd B;  // rank x width
  Eigen::VectorXd b;  // rank
  double gamma = 0.0;
  std::vector<Eigen::VectorXd> samples;  // width points of E_rank
};

/// Learnable state of a Generative Equilibrium Operator: depth+1 gated layers
/// followed by a rank x rank readout acting in coefficient space.
struct GeoParams {
  BasisPtr basis;
  int rank = 1;
  int depth = 0;
  int width = 1;
  std::vector<GeoLayer> layers;
  Eigen::MatrixXd readout;
  ProxFn prox;
  double tau = 1.0;
  NoiseSpec noise;

  /// Zero-initialized parameters with identity readout.
  static GeoParams zeros(BasisPtr basis, int rank, int depth, int width, ProxFn prox, double tau = 1.0);

  void validate() const;
};

/// x^{(l+1)} = gamma x^{(l)} + (1-gamma) sigma_f(A x^{(l)} + B (g(x^{(l)} + x_m))_m + b),
/// output = readout * x^{(L+1)}. g acts on rank-R coefficient vectors.
CoeffVec geo_forward(const GeoParams& params, const ObjectiveG& g, const CoeffVec& noise);
Eigen::VectorXd geo_forward(const GeoParams& params, const ObjectiveG& g, const Eigen::VectorXd& noise);

/// Layer weights realizing the projected splitting iteration: width R+1, sample
/// points delta*e_0..delta*e_{R-1} and 0, B rows (-lambda_l/delta at i,
/// +lambda_l/delta at R), A = I, b = 0, gamma_l = 1 - alpha_l for the first L
/// layers, a pass-through final layer (gamma = 1), identity readout.
/// Requires a decay- or ramp-compliant schedule.
GeoParams build_theoretical_geo(const ProxFn& f, const SplitSchedule& schedule, const BasisPtr& basis,
                                const NoiseSpec& noise = {}, double tau = 1.0);
/// Same construction without the compliance requirement.
GeoParams build_unrolled_geo(const ProxFn& f, const SplitSchedule& schedule, const BasisPtr& basis,
                             const NoiseSpec& noise = {}, double tau = 1.0);

/// (L+1)(R^2 + R M + R + 1) + R^2 + (L+1) M R.
std::size_t count_params(const GeoParams& params);

nlohmann::json to_json(const GeoParams& params);
/// Rebuilds the basis from its embedded id.
GeoParams geo_params_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ProxFn& f);
ProxFn prox_from_json(const nlohmann::json& j);
BasisPtr basis_from_id(const std::string& id);

}  // namespace geoprox
