#pragma once

#include "geoprox/geo.hpp"
#include "geoprox/splitting.hpp"

#include <functional>
#include <vector>

namespace geoprox {

/// Append-only record of a GEO forward pass. Inputs of a node always precede
/// it, so one reverse sweep visits every node once.
struct Tape {
  enum class Op { Input, Sample, PreActivation, Activation, Gate, Readout };

  struct Node {
    Op op = Op::Input;
    int layer = -1;
    std::vector<int> inputs;
    Eigen::VectorXd value;
    /// Sample nodes: gradients of g at the M probe points, one column each.
    Eigen::MatrixXd aux;
  };

  std::vector<Node> nodes;
  int output = -1;
  const GeoParams* params = nullptr;

  std::size_t size() const { return nodes.size(); }
  /// Total number of cached scalars across nodes.
  std::size_t cached_scalars() const;
};

struct Recording {
  Eigen::VectorXd output;
  Tape tape;
};

/// Replays geo_forward while caching every intermediate. The output is
/// bit-identical to geo_forward. `params` must outlive the tape.
Recording forward_record(const GeoParams& params, const ObjectiveG& g, const Eigen::VectorXd& noise);

/// Fault injection for checker sanity tests only.
struct BackwardOptions {
  bool negate_bias_rule = false;
};

/// Gradients of <seed, output> for every scalar of GeoParams, returned in a
/// GeoParams-shaped container (gamma fields hold d/dgamma). Also fills
/// `noise_grad` when non-null.
GeoParams backward(const Tape& tape, const Eigen::VectorXd& seed, const BackwardOptions& options = {},
                   Eigen::VectorXd* noise_grad = nullptr);

/// Loss on the GEO output: returns the value and writes d loss/d output.
using OutputLoss = std::function<double(const Eigen::VectorXd& output, Eigen::VectorXd& grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// Central differences (loss(theta+h) - loss(theta-h))/2h against backward,
/// over every scalar of GeoParams. Coordinates whose perturbation moves any
/// pre-activation value across or within 10h of a prox kink are skipped.
/// Relative error uses max(|fd|, |analytic|, 1e-5) as the denominator.
GradCheckReport grad_check(const GeoParams& params, const ObjectiveG& g, const Eigen::VectorXd& noise,
                           const OutputLoss& loss, double h, const BackwardOptions& options = {});

/// Which GeoParams fields are packed into the trainable vector.
struct ParamMask {
  bool A = true;
  bool B = true;
  bool b = true;
  bool gamma = true;
  bool samples = false;
  bool readout = true;
};

/// Mapping between GeoParams and a flat trainable vector. Gates are packed as
/// logits (gamma = sigmoid(theta)); gates at exactly 0 or 1 stay frozen.
class ParamLayout {
 public:
  ParamLayout(const GeoParams& params, ParamMask mask);

  std::size_t size() const { return size_; }
  Eigen::VectorXd pack(const GeoParams& params) const;
  void unpack(const Eigen::VectorXd& theta, GeoParams& params) const;
  /// Chain rule through the gate squashing: d/dtheta = d/dgamma * gamma (1 - gamma).
  Eigen::VectorXd pack_gradient(const GeoParams& grads, const GeoParams& params) const;

 private:
  ParamMask mask_;
  std::vector<bool> gate_trainable_;
  std::size_t size_ = 0;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(std::size_t n, double lr);
};

/// Bias-corrected Adam update in place; t is incremented first.
void adam_step(Eigen::Ref<Eigen::VectorXd> theta, const Eigen::VectorXd& grad, AdamState& state);

/// GeoParams-shaped convenience: packs, steps, and unpacks.
void adam_step(GeoParams& params, const GeoParams& grads, AdamState& state, const ParamLayout& layout);

}  // namespace geoprox
