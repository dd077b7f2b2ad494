#include "geoprox/hilbert.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace geoprox {

namespace {

// Dense grids are integrated by the trapezoid rule when they reach this far
// out; Gaussian-weighted data is negligible beyond.
constexpr double kGridCover = 8.0;
constexpr double kGridMaxSpacing = 0.1;

void require_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite()) throw std::domain_error(std::string(what) + ": non-finite entry");
}

// Gauss-Hermite nodes by Golub-Welsch, polished by Newton on e_n. Weights use
// w_i e^{u_i^2} = 1 / (n e_{n-1}(u_i)^2), which stays accurate in the tails.
void gauss_hermite(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k - 1, k) = jacobi(k, k - 1) = std::sqrt(0.5 * k);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi, Eigen::EigenvaluesOnly);
  nodes = solver.eigenvalues();
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double u = nodes[i];
    for (int it = 0; it < 8; ++it) {
      const Eigen::VectorXd e = hermite_functions(u, n + 1);
      const double deriv = std::sqrt(2.0 * n) * e[n - 1] - u * e[n];
      if (deriv == 0.0) break;
      const double step = e[n] / deriv;
      u -= step;
      if (std::abs(step) < 1e-16 * std::max(1.0, std::abs(u))) break;
    }
    nodes[i] = u;
    const double prev = hermite_functions(u, n)[n - 1];
    weights[i] = 1.0 / (n * prev * prev);
  }
  // Symmetrize so that odd integrands vanish to rounding.
  for (int i = 0; i < n / 2; ++i) {
    const double u = 0.5 * (nodes[n - 1 - i] - nodes[i]);
    const double w = 0.5 * (weights[i] + weights[n - 1 - i]);
    nodes[i] = -u;
    nodes[n - 1 - i] = u;
    weights[i] = weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) nodes[n / 2] = 0.0;
}

std::string make_id(BasisKind kind, int a, int b) {
  std::ostringstream os;
  if (kind == BasisKind::StandardEuclidean) {
    os << "standard:d=" << a << ":R=" << b;
  } else {
    os << "hermite:R=" << a << ":N=" << b;
  }
  return os.str();
}

}  // namespace

std::shared_ptr<const Basis> Basis::standard(int dim, int max_rank) {
  if (dim < 1) throw std::invalid_argument("standard basis: dimension must be positive");
  if (max_rank == 0) max_rank = dim;
  if (max_rank < 1 || max_rank > dim) {
    throw std::invalid_argument("standard basis: max-rank must lie in [1, d]");
  }
  std::shared_ptr<Basis> basis(new Basis());
  basis->kind_ = BasisKind::StandardEuclidean;
  basis->dim_ = dim;
  basis->max_rank_ = max_rank;
  basis->id_ = make_id(basis->kind_, dim, max_rank);
  return basis;
}

std::shared_ptr<const Basis> Basis::hermite(int max_rank, int quadrature_nodes) {
  if (max_rank < 1) throw std::invalid_argument("hermite basis: max-rank must be positive");
  if (quadrature_nodes == 0) quadrature_nodes = 4 * max_rank;
  if (quadrature_nodes < 4 * max_rank) {
    throw std::invalid_argument("hermite basis: quadrature-node-count must be at least 4 * max-rank");
  }
  std::shared_ptr<Basis> basis(new Basis());
  basis->kind_ = BasisKind::HermiteGaussian;
  basis->max_rank_ = max_rank;
  basis->id_ = make_id(basis->kind_, max_rank, quadrature_nodes);
  gauss_hermite(quadrature_nodes, basis->nodes_, basis->weights_);
  basis->node_values_.resize(quadrature_nodes, max_rank);
  for (int i = 0; i < quadrature_nodes; ++i) {
    basis->node_values_.row(i) = hermite_functions(basis->nodes_[i], max_rank).transpose();
  }
  return basis;
}

CoeffVec::CoeffVec(BasisPtr basis, Eigen::VectorXd coeffs) : basis_(std::move(basis)), coeffs_(std::move(coeffs)) {
  if (!basis_) throw std::invalid_argument("CoeffVec: null basis");
  if (coeffs_.size() < 1) throw std::invalid_argument("CoeffVec: rank must be positive");
  if (coeffs_.size() > basis_->max_rank()) {
    throw std::invalid_argument("CoeffVec: rank exceeds basis max-rank");
  }
  require_finite(coeffs_, "CoeffVec");
}

CoeffVec CoeffVec::zeros(BasisPtr basis, int rank) {
  return CoeffVec(std::move(basis), Eigen::VectorXd::Zero(rank));
}

bool CoeffVec::combinable(const CoeffVec& other) const {
  return rank() == other.rank() && (basis_ == other.basis_ || basis_->id() == other.basis_->id());
}

double CoeffVec::dot(const CoeffVec& other) const {
  if (!combinable(other)) throw std::invalid_argument("CoeffVec: basis or rank mismatch");
  return coeffs_.dot(other.coeffs_);
}

CoeffVec CoeffVec::operator+(const CoeffVec& other) const {
  if (!combinable(other)) throw std::invalid_argument("CoeffVec: basis or rank mismatch");
  return CoeffVec(basis_, coeffs_ + other.coeffs_);
}

CoeffVec CoeffVec::operator-(const CoeffVec& other) const {
  if (!combinable(other)) throw std::invalid_argument("CoeffVec: basis or rank mismatch");
  return CoeffVec(basis_, coeffs_ - other.coeffs_);
}

CoeffVec CoeffVec::operator*(double s) const { return CoeffVec(basis_, coeffs_ * s); }

GridFn::GridFn(std::vector<double> n, std::vector<double> v) : nodes(std::move(n)), values(std::move(v)) {
  validate();
}

void GridFn::validate() const {
  if (nodes.size() != values.size()) throw std::invalid_argument("GridFn: nodes and values differ in length");
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    if (!(nodes[i] > nodes[i - 1])) throw std::invalid_argument("GridFn: nodes must be strictly increasing");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::domain_error("GridFn: non-finite value");
  }
}

void write_csv(std::ostream& os, const GridFn& fn) {
  os << "node,value\n";
  char buf[64];
  for (std::size_t i = 0; i < fn.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", fn.nodes[i], fn.values[i]);
    os << buf;
  }
}

GridFn read_grid_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "node,value") throw std::runtime_error("grid csv: missing header");
  std::vector<double> nodes, values;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("grid csv: malformed row");
    nodes.push_back(std::stod(line.substr(0, comma)));
    values.push_back(std::stod(line.substr(comma + 1)));
  }
  return GridFn(std::move(nodes), std::move(values));
}

std::vector<double> uniform_grid(double lo, double hi, int points) {
  if (points < 2 || !(hi > lo)) throw std::invalid_argument("uniform_grid: need hi > lo and at least two points");
  std::vector<double> grid(points);
  const double h = (hi - lo) / (points - 1);
  for (int i = 0; i < points; ++i) grid[i] = lo + h * i;
  grid.back() = hi;
  return grid;
}

Eigen::VectorXd hermite_functions(double u, int count) {
  Eigen::VectorXd e(count);
  if (count == 0) return e;
  e[0] = std::exp(-0.5 * u * u) / std::sqrt(std::sqrt(std::numbers::pi));
  if (count > 1) e[1] = std::numbers::sqrt2 * u * e[0];
  for (int j = 1; j + 1 < count; ++j) {
    e[j + 1] = std::sqrt(2.0 / (j + 1)) * u * e[j] - std::sqrt(static_cast<double>(j) / (j + 1)) * e[j - 1];
  }
  return e;
}

double basis_eval(const Basis& basis, int j, double u) {
  if (j < 0 || j >= basis.max_rank()) throw std::out_of_range("basis_eval: index out of range");
  if (!basis.is_hermite()) {
    throw std::invalid_argument("basis_eval: standard basis has no pointwise evaluation");
  }
  return hermite_functions(u, j + 1)[j];
}

Eigen::VectorXd lift_to_nodes(const Basis& basis, const Eigen::VectorXd& z) {
  return basis.node_values().leftCols(z.size()) * z;
}

Eigen::VectorXd encode_from_nodes(const Basis& basis, const Eigen::VectorXd& values, int rank) {
  return basis.node_values().leftCols(rank).transpose() * basis.weights().cwiseProduct(values);
}

double quadrature_integral(const Basis& basis, const Eigen::VectorXd& values) {
  return basis.weights().dot(values);
}

CoeffVec encode(const GridFn& x, const BasisPtr& basis, int rank) {
  if (rank < 1 || rank > basis->max_rank()) throw std::invalid_argument("encode: rank too large");
  if (!basis->is_hermite()) {
    return encode(Eigen::Map<const Eigen::VectorXd>(x.values.data(), static_cast<Eigen::Index>(x.values.size())),
                  basis, rank);
  }
  x.validate();
  const auto& qn = basis->nodes();
  const Eigen::Index n = static_cast<Eigen::Index>(x.size());
  if (n == qn.size()) {
    bool on_nodes = true;
    for (Eigen::Index i = 0; i < n && on_nodes; ++i) on_nodes = std::abs(x.nodes[i] - qn[i]) <= 1e-12;
    if (on_nodes) {
      return CoeffVec(basis, encode_from_nodes(*basis, Eigen::Map<const Eigen::VectorXd>(x.values.data(), n), rank));
    }
  }
  if (n < 2 || x.nodes.front() > -kGridCover || x.nodes.back() < kGridCover) {
    throw std::invalid_argument("encode: grid incompatible with quadrature rule");
  }
  for (Eigen::Index i = 1; i < n; ++i) {
    if (x.nodes[i] - x.nodes[i - 1] > kGridMaxSpacing) {
      throw std::invalid_argument("encode: grid incompatible with quadrature rule");
    }
  }
  // Trapezoid rule on the supplied grid.
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(rank);
  for (Eigen::Index i = 0; i < n; ++i) {
    double w = 0.0;
    if (i > 0) w += 0.5 * (x.nodes[i] - x.nodes[i - 1]);
    if (i + 1 < n) w += 0.5 * (x.nodes[i + 1] - x.nodes[i]);
    acc += (w * x.values[i]) * hermite_functions(x.nodes[i], rank);
  }
  return CoeffVec(basis, acc);
}

CoeffVec encode(const Eigen::VectorXd& x, const BasisPtr& basis, int rank) {
  if (rank < 1 || rank > basis->max_rank()) throw std::invalid_argument("encode: rank too large");
  if (basis->is_hermite()) {
    if (x.size() != basis->quadrature_size()) {
      throw std::invalid_argument("encode: grid incompatible with quadrature rule");
    }
    return CoeffVec(basis, encode_from_nodes(*basis, x, rank));
  }
  if (x.size() != basis->dim()) throw std::invalid_argument("encode: vector length must equal d");
  return CoeffVec(basis, x.head(rank));
}

CoeffVec encode(const std::function<double(double)>& x, const BasisPtr& basis, int rank) {
  if (!basis->is_hermite()) throw std::invalid_argument("encode: pointwise input needs a function basis");
  Eigen::VectorXd values(basis->quadrature_size());
  for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = x(basis->nodes()[i]);
  return encode(values, basis, rank);
}

GridFn lift(const CoeffVec& z, std::span<const double> nodes) {
  const Basis& basis = z.basis();
  if (!basis.is_hermite()) {
    std::vector<double> idx(basis.dim()), vals(basis.dim(), 0.0);
    for (int i = 0; i < basis.dim(); ++i) idx[i] = i;
    for (int i = 0; i < z.rank(); ++i) vals[i] = z[i];
    return GridFn(std::move(idx), std::move(vals));
  }
  std::vector<double> vals(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    vals[i] = hermite_functions(nodes[i], z.rank()).dot(z.coeffs());
  }
  return GridFn(std::vector<double>(nodes.begin(), nodes.end()), std::move(vals));
}

CoeffVec project(const CoeffVec& z, int rank) {
  if (rank < 1 || rank > z.rank()) throw std::invalid_argument("project: rank must lie in [1, z.rank]");
  return CoeffVec(z.basis_ptr(), z.coeffs().head(rank));
}

CoeffVec project_padded(const CoeffVec& z, int rank) {
  if (rank < 1 || rank > z.rank()) throw std::invalid_argument("project: rank must lie in [1, z.rank]");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(z.rank());
  c.head(rank) = z.coeffs().head(rank);
  return CoeffVec(z.basis_ptr(), std::move(c));
}

Eigen::MatrixXd derivative_matrix(const Basis& basis, int rank) {
  if (!basis.is_hermite()) throw std::invalid_argument("derivative_matrix: requires the hermite basis");
  if (rank < 1) throw std::invalid_argument("derivative_matrix: rank must be positive");
  // e_j' = sqrt(j/2) e_{j-1} - sqrt((j+1)/2) e_{j+1}
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(rank, rank);
  for (int j = 0; j < rank; ++j) {
    if (j >= 1) d(j - 1, j) = std::sqrt(0.5 * j);
    if (j + 1 < rank) d(j + 1, j) = -std::sqrt(0.5 * (j + 1));
  }
  return d;
}

}  // namespace geoprox
