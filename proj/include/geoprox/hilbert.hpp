#pragma once

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace geoprox {

enum class BasisKind { StandardEuclidean, HermiteGaussian };

/// Finite-rank view of a separable Hilbert space: either the standard basis of
/// R^d or the Hermite-Gaussian functions of L^2(R) with a Gauss-Hermite rule.
///
/// Gauss-Hermite weights are stored folded with e^{u^2}, so that
/// sum_i weights[i] * h(nodes[i]) approximates the plain integral of h.
class Basis {
 public:
  static std::shared_ptr<const Basis> standard(int dim, int max_rank = 0);
  /// quadrature_nodes = 0 selects the default 4 * max_rank.
  static std::shared_ptr<const Basis> hermite(int max_rank, int quadrature_nodes = 0);

  BasisKind kind() const { return kind_; }
  bool is_hermite() const { return kind_ == BasisKind::HermiteGaussian; }
  /// Ambient dimension for the standard basis, 0 for Hermite.
  int dim() const { return dim_; }
  int max_rank() const { return max_rank_; }
  const std::string& id() const { return id_; }

  int quadrature_size() const { return static_cast<int>(nodes_.size()); }
  const Eigen::VectorXd& nodes() const { return nodes_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  /// e_j(nodes[i]) laid out as quadrature_size x max_rank.
  const Eigen::MatrixXd& node_values() const { return node_values_; }

 private:
  Basis() = default;

  BasisKind kind_ = BasisKind::StandardEuclidean;
  int dim_ = 0;
  int max_rank_ = 0;
  std::string id_;
  Eigen::VectorXd nodes_;
  Eigen::VectorXd weights_;
  Eigen::MatrixXd node_values_;
};

using BasisPtr = std::shared_ptr<const Basis>;

/// Coefficients of an element of E_rank with respect to a declared basis.
class CoeffVec {
 public:
  CoeffVec(BasisPtr basis, Eigen::VectorXd coeffs);

  static CoeffVec zeros(BasisPtr basis, int rank);

  int rank() const { return static_cast<int>(coeffs_.size()); }
  const Eigen::VectorXd& coeffs() const { return coeffs_; }
  double operator[](int i) const { return coeffs_[i]; }
  const Basis& basis() const { return *basis_; }
  const BasisPtr& basis_ptr() const { return basis_; }

  bool combinable(const CoeffVec& other) const;
  double norm() const { return coeffs_.norm(); }
  double dot(const CoeffVec& other) const;

  CoeffVec operator+(const CoeffVec& other) const;
  CoeffVec operator-(const CoeffVec& other) const;
  CoeffVec operator*(double s) const;

 private:
  BasisPtr basis_;
  Eigen::VectorXd coeffs_;
};

/// Sampled function on a strictly increasing grid.
struct GridFn {
  std::vector<double> nodes;
  std::vector<double> values;

  GridFn() = default;
  GridFn(std::vector<double> nodes, std::vector<double> values);

  std::size_t size() const { return nodes.size(); }
  void validate() const;
};

/// Two-column CSV with header "node,value".
void write_csv(std::ostream& os, const GridFn& fn);
GridFn read_grid_csv(std::istream& is);

/// Uniform grid with `points` nodes over [lo, hi].
std::vector<double> uniform_grid(double lo, double hi, int points);

/// Normalized Hermite functions e_0(u), ..., e_{count-1}(u) by the three-term
/// recurrence on e_j itself.
Eigen::VectorXd hermite_functions(double u, int count);

double basis_eval(const Basis& basis, int j, double u);

CoeffVec encode(const GridFn& x, const BasisPtr& basis, int rank);
CoeffVec encode(const Eigen::VectorXd& x, const BasisPtr& basis, int rank);
/// Samples `x` on the quadrature nodes and integrates with the Gauss-Hermite rule.
CoeffVec encode(const std::function<double(double)>& x, const BasisPtr& basis, int rank);

/// Pointwise sum of z_j e_j at each node. The standard basis ignores `nodes`
/// and returns the zero-padded coefficient vector indexed 0..d-1.
GridFn lift(const CoeffVec& z, std::span<const double> nodes);

/// Values of the lifted function at the quadrature nodes of its basis.
Eigen::VectorXd lift_to_nodes(const Basis& basis, const Eigen::VectorXd& z);
/// Gauss-Hermite inner products against e_0..e_{rank-1} of nodal values.
Eigen::VectorXd encode_from_nodes(const Basis& basis, const Eigen::VectorXd& values, int rank);

CoeffVec project(const CoeffVec& z, int rank);
/// P_R with the original rank kept; coefficients at index >= rank are zero.
CoeffVec project_padded(const CoeffVec& z, int rank);

/// Coefficient matrix of d/du on Hermite functions, truncated to rank x rank.
Eigen::MatrixXd derivative_matrix(const Basis& basis, int rank);

/// Gauss-Hermite integral of nodal values.
double quadrature_integral(const Basis& basis, const Eigen::VectorXd& values);

}  // namespace geoprox
