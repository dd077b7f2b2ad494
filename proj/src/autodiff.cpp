#include "geoprox/autodiff.hpp"

#include "geo_detail.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace geoprox {

std::size_t Tape::cached_scalars() const {
  std::size_t n = 0;
  for (const auto& node : nodes) n += node.value.size() + node.aux.size();
  return n;
}

Recording forward_record(const GeoParams& params, const ObjectiveG& g, const Eigen::VectorXd& noise) {
  std::vector<detail::LayerTrace> trace;
  const Eigen::VectorXd state = detail::forward_layers(params, g, noise, &trace);

  Recording rec;
  Tape& tape = rec.tape;
  tape.params = &params;
  auto push = [&tape](Tape::Op op, int layer, std::vector<int> inputs, Eigen::VectorXd value) {
    Tape::Node node;
    node.op = op;
    node.layer = layer;
    node.inputs = std::move(inputs);
    node.value = std::move(value);
    tape.nodes.push_back(std::move(node));
    return static_cast<int>(tape.nodes.size()) - 1;
  };

  int x = push(Tape::Op::Input, -1, {}, noise);
  for (std::size_t l = 0; l < trace.size(); ++l) {
    auto& t = trace[l];
    const int layer = static_cast<int>(l);
    const int sample = push(Tape::Op::Sample, layer, {x}, std::move(t.gvals));
    Eigen::MatrixXd grads(params.rank, params.width);
    for (int m = 0; m < params.width; ++m) grads.col(m) = t.ggrads[m];
    tape.nodes[sample].aux = std::move(grads);
    const int pre = push(Tape::Op::PreActivation, layer, {x, sample}, std::move(t.pre));
    const int act = push(Tape::Op::Activation, layer, {pre}, std::move(t.act));
    const Eigen::VectorXd& xin = tape.nodes[x].value;
    const Eigen::VectorXd& a = tape.nodes[act].value;
    const double gamma = params.layers[l].gamma;
    x = push(Tape::Op::Gate, layer, {x, act}, gamma * xin + (1.0 - gamma) * a);
  }
  rec.output = params.readout * state;
  tape.output = push(Tape::Op::Readout, -1, {x}, rec.output);
  return rec;
}

GeoParams backward(const Tape& tape, const Eigen::VectorXd& seed, const BackwardOptions& options,
                   Eigen::VectorXd* noise_grad) {
  if (!tape.params || tape.output < 0) throw std::invalid_argument("backward: empty tape");
  const GeoParams& params = *tape.params;
  if (seed.size() != params.rank) throw std::invalid_argument("backward: seed rank mismatch");

  GeoParams grads = GeoParams::zeros(params.basis, params.rank, params.depth, params.width, params.prox, params.tau);
  grads.readout.setZero();
  std::vector<Eigen::VectorXd> adj(tape.nodes.size());
  for (std::size_t i = 0; i < tape.nodes.size(); ++i) adj[i] = Eigen::VectorXd::Zero(tape.nodes[i].value.size());
  adj[tape.output] = seed;

  for (int id = tape.output; id >= 0; --id) {
    const Tape::Node& node = tape.nodes[id];
    const Eigen::VectorXd& bar = adj[id];
    switch (node.op) {
      case Tape::Op::Readout: {
        const Eigen::VectorXd& xin = tape.nodes[node.inputs[0]].value;
        grads.readout.noalias() += bar * xin.transpose();
        adj[node.inputs[0]].noalias() += params.readout.transpose() * bar;
        break;
      }
      case Tape::Op::Gate: {
        const double gamma = params.layers[node.layer].gamma;
        const Eigen::VectorXd& xin = tape.nodes[node.inputs[0]].value;
        const Eigen::VectorXd& act = tape.nodes[node.inputs[1]].value;
        grads.layers[node.layer].gamma += bar.dot(xin - act);
        adj[node.inputs[0]] += gamma * bar;
        adj[node.inputs[1]] += (1.0 - gamma) * bar;
        break;
      }
      case Tape::Op::Activation: {
        const Eigen::VectorXd& pre = tape.nodes[node.inputs[0]].value;
        adj[node.inputs[0]] += prox_vjp(params.prox, params.tau, *params.basis, pre, bar);
        break;
      }
      case Tape::Op::PreActivation: {
        const GeoLayer& layer = params.layers[node.layer];
        GeoLayer& glayer = grads.layers[node.layer];
        const Eigen::VectorXd& xin = tape.nodes[node.inputs[0]].value;
        const Eigen::VectorXd& gvals = tape.nodes[node.inputs[1]].value;
        glayer.A.noalias() += bar * xin.transpose();
        glayer.B.noalias() += bar * gvals.transpose();
        if (options.negate_bias_rule) {
          glayer.b -= bar;
        } else {
          glayer.b += bar;
        }
        adj[node.inputs[0]].noalias() += layer.A.transpose() * bar;
        adj[node.inputs[1]].noalias() += layer.B.transpose() * bar;
        break;
      }
      case Tape::Op::Sample: {
        // gvals_m = g(x + x_m): both x and x_m receive vbar_m * grad g.
        GeoLayer& glayer = grads.layers[node.layer];
        const int x_id = node.inputs[0];
        for (int m = 0; m < params.width; ++m) {
          if (bar[m] == 0.0) continue;
          const auto contribution = bar[m] * node.aux.col(m);
          adj[x_id] += contribution;
          glayer.samples[m] += contribution;
        }
        break;
      }
      case Tape::Op::Input:
        if (noise_grad) *noise_grad = bar;
        break;
    }
  }
  return grads;
}

namespace {

// Pointwise pre-activation values of every layer: coordinates on the standard
// basis, nodal values on the Hermite basis.
std::vector<double> pointwise_preactivations(const GeoParams& params, const ObjectiveG& g,
                                             const Eigen::VectorXd& noise) {
  std::vector<double> out;
  if (!params.prox.pointwise()) return out;
  std::vector<detail::LayerTrace> trace;
  detail::forward_layers(params, g, noise, &trace);
  for (const auto& t : trace) {
    const Eigen::VectorXd v = params.basis->is_hermite() ? lift_to_nodes(*params.basis, t.pre) : t.pre;
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

bool near_or_across_kink(const std::vector<double>& base, const std::vector<double>& moved,
                         const std::vector<double>& kinks, double margin) {
  for (std::size_t i = 0; i < base.size(); ++i) {
    for (double k : kinks) {
      if (std::abs(moved[i] - k) < margin) return true;
      if ((base[i] < k) != (moved[i] < k)) return true;
    }
  }
  return false;
}

// Visits every scalar of GeoParams in a fixed order.
template <class Params, class Fn>
void for_each_scalar(Params& p, Fn&& fn) {
  for (auto& layer : p.layers) {
    for (Eigen::Index i = 0; i < layer.A.size(); ++i) fn(layer.A.data()[i]);
    for (Eigen::Index i = 0; i < layer.B.size(); ++i) fn(layer.B.data()[i]);
    for (Eigen::Index i = 0; i < layer.b.size(); ++i) fn(layer.b[i]);
    fn(layer.gamma);
    for (auto& s : layer.samples) {
      for (Eigen::Index i = 0; i < s.size(); ++i) fn(s[i]);
    }
  }
  for (Eigen::Index i = 0; i < p.readout.size(); ++i) fn(p.readout.data()[i]);
}

}  // namespace

GradCheckReport grad_check(const GeoParams& params, const ObjectiveG& g, const Eigen::VectorXd& noise,
                           const OutputLoss& loss, double h, const BackwardOptions& options) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  const Recording rec = forward_record(params, g, noise);
  Eigen::VectorXd seed(params.rank);
  loss(rec.output, seed);
  const GeoParams grads = backward(rec.tape, seed, options);

  std::vector<double> analytic;
  for_each_scalar(grads, [&](const double& v) { analytic.push_back(v); });

  const std::vector<double> kinks = prox_kinks(params.prox, params.tau);
  const std::vector<double> base_pre = pointwise_preactivations(params, g, noise);

  GeoParams probe = params;
  std::vector<double*> slots;
  for_each_scalar(probe, [&](double& v) { slots.push_back(&v); });

  GradCheckReport report;
  Eigen::VectorXd scratch(params.rank);
  auto eval = [&](const GeoParams& p) { return loss(geo_forward(p, g, noise), scratch); };
  for (std::size_t k = 0; k < slots.size(); ++k) {
    double& slot = *slots[k];
    const double orig = slot;
    const bool is_gamma = [&] {
      // Gates must stay in [0, 1]; one-sided positions are skipped.
      for (std::size_t l = 0; l < probe.layers.size(); ++l) {
        if (&probe.layers[l].gamma == &slot) return true;
      }
      return false;
    }();
    if (is_gamma && (orig - h < 0.0 || orig + h > 1.0)) {
      ++report.skipped;
      continue;
    }
    slot = orig + h;
    const std::vector<double> pre_plus = pointwise_preactivations(probe, g, noise);
    const double up = eval(probe);
    slot = orig - h;
    const std::vector<double> pre_minus = pointwise_preactivations(probe, g, noise);
    const double down = eval(probe);
    slot = orig;
    if (!kinks.empty() && (near_or_across_kink(base_pre, pre_plus, kinks, 10 * h) ||
                           near_or_across_kink(base_pre, pre_minus, kinks, 10 * h))) {
      ++report.skipped;
      continue;
    }
    const double fd = (up - down) / (2 * h);
    const double an = analytic[k];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-5});
    report.max_rel_error = std::max(report.max_rel_error, std::abs(fd - an) / denom);
    ++report.checked;
  }
  return report;
}

ParamLayout::ParamLayout(const GeoParams& params, ParamMask mask) : mask_(mask) {
  const std::size_t r = params.rank;
  const std::size_t m = params.width;
  for (const auto& layer : params.layers) {
    if (mask.A) size_ += r * r;
    if (mask.B) size_ += r * m;
    if (mask.b) size_ += r;
    const bool trainable = mask.gamma && layer.gamma > 0.0 && layer.gamma < 1.0;
    gate_trainable_.push_back(trainable);
    if (trainable) size_ += 1;
    if (mask.samples) size_ += m * r;
  }
  if (mask.readout) size_ += r * r;
}

namespace {

template <class Visit>
void walk_layout(const ParamMask& mask, const std::vector<bool>& gates, GeoParams& p, Visit&& visit) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    if (mask.A) {
      for (Eigen::Index i = 0; i < layer.A.size(); ++i) visit(layer.A.data()[i], false);
    }
    if (mask.B) {
      for (Eigen::Index i = 0; i < layer.B.size(); ++i) visit(layer.B.data()[i], false);
    }
    if (mask.b) {
      for (Eigen::Index i = 0; i < layer.b.size(); ++i) visit(layer.b[i], false);
    }
    if (gates[l]) visit(layer.gamma, true);
    if (mask.samples) {
      for (auto& s : layer.samples) {
        for (Eigen::Index i = 0; i < s.size(); ++i) visit(s[i], false);
      }
    }
  }
  if (mask.readout) {
    for (Eigen::Index i = 0; i < p.readout.size(); ++i) visit(p.readout.data()[i], false);
  }
}

double logit(double p) { return std::log(p) - std::log1p(-p); }
double sigmoid(double t) { return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

}  // namespace

Eigen::VectorXd ParamLayout::pack(const GeoParams& params) const {
  Eigen::VectorXd theta(size_);
  std::size_t k = 0;
  GeoParams& p = const_cast<GeoParams&>(params);  // walk_layout only reads here
  walk_layout(mask_, gate_trainable_, p, [&](double& v, bool gate) { theta[k++] = gate ? logit(v) : v; });
  return theta;
}

void ParamLayout::unpack(const Eigen::VectorXd& theta, GeoParams& params) const {
  if (static_cast<std::size_t>(theta.size()) != size_) throw std::invalid_argument("ParamLayout: size mismatch");
  std::size_t k = 0;
  walk_layout(mask_, gate_trainable_, params, [&](double& v, bool gate) {
    const double t = theta[k++];
    // Saturated logits would pin the gate at 0 or 1 and freeze it for good.
    v = gate ? std::clamp(sigmoid(t), 1e-12, 1.0 - 1e-12) : t;
  });
}

Eigen::VectorXd ParamLayout::pack_gradient(const GeoParams& grads, const GeoParams& params) const {
  Eigen::VectorXd out(size_);
  std::size_t k = 0;
  GeoParams& g = const_cast<GeoParams&>(grads);
  walk_layout(mask_, gate_trainable_, g, [&](double& v, bool) { out[k++] = v; });
  k = 0;
  GeoParams& p = const_cast<GeoParams&>(params);
  walk_layout(mask_, gate_trainable_, p, [&](double& v, bool gate) {
    if (gate) out[k] *= v * (1.0 - v);
    ++k;
  });
  return out;
}

AdamState AdamState::for_size(std::size_t n, double lr) {
  AdamState s;
  s.m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  s.v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  s.lr = lr;
  return s;
}

void adam_step(Eigen::Ref<Eigen::VectorXd> theta, const Eigen::VectorXd& grad, AdamState& state) {
  if (theta.size() != grad.size() || state.m.size() != grad.size() || state.v.size() != grad.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  state.t += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  theta.array() -= state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
}

void adam_step(GeoParams& params, const GeoParams& grads, AdamState& state, const ParamLayout& layout) {
  Eigen::VectorXd theta = layout.pack(params);
  adam_step(theta, layout.pack_gradient(grads, params), state);
  layout.unpack(theta, params);
}

}  // namespace geoprox
