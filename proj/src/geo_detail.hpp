#pragma once

#include "geoprox/geo.hpp"

#include <vector>

namespace geoprox::detail {

/// Intermediates of one GEO layer, kept when a trace is requested.
struct LayerTrace {
  Eigen::VectorXd input;               // x^{(l)}
  Eigen::VectorXd gvals;               // g(x^{(l)} + x_m), m = 1..M
  std::vector<Eigen::VectorXd> ggrads;  // grad g at the same points
  Eigen::VectorXd pre;                 // A x + B gvals + b
  Eigen::VectorXd act;                 // sigma_f(pre)
};

/// out += B gvals accumulated in long double. The theoretical weights pair
/// -lambda/delta and +lambda/delta against nearly equal g values, and a double
/// product would lose about log2(1/delta) bits to the cancellation.
inline void add_sample_term(Eigen::VectorXd& out, const Eigen::MatrixXd& B, const Eigen::VectorXd& gvals) {
  for (Eigen::Index i = 0; i < B.rows(); ++i) {
    long double acc = 0.0L;
    for (Eigen::Index m = 0; m < B.cols(); ++m) acc += static_cast<long double>(B(i, m)) * gvals[m];
    out[i] += static_cast<double>(acc);
  }
}

/// Single forward implementation shared by geo_forward and the recording pass,
/// so both produce bit-identical outputs. `trace` may be null. Returns the
/// final state before the readout.
Eigen::VectorXd forward_layers(const GeoParams& params, const ObjectiveG& g, const Eigen::VectorXd& noise,
                               std::vector<LayerTrace>* trace);

}  // namespace geoprox::detail
