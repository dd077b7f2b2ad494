#include "geoprox/hilbert.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace geoprox;
using testsupport::hermite_direct;

TEST_CASE("basis_eval at the origin") {
  const auto h = Basis::hermite(8);
  CHECK(basis_eval(*h, 0, 0.0) == doctest::Approx(std::pow(std::numbers::pi, -0.25)).epsilon(1e-15));
  CHECK(basis_eval(*h, 1, 0.0) == 0.0);
  CHECK(std::abs(basis_eval(*h, 0, 0.0) - 0.7511255) < 1e-7);
}

TEST_CASE("basis_eval matches the explicit Hermite polynomial sum") {
  const auto h = Basis::hermite(20);
  CHECK(basis_eval(*h, 5, 1.3) == doctest::Approx(hermite_direct(5, 1.3)).epsilon(1e-13));
  for (int j = 0; j < 20; ++j) {
    for (double u : {-4.0, -1.7, -0.3, 0.0, 0.9, 2.5, 5.5}) {
      CHECK(std::abs(basis_eval(*h, j, u) - hermite_direct(j, u)) < 1e-12);
    }
  }
}

TEST_CASE("basis_eval rejects bad arguments") {
  const auto h = Basis::hermite(4);
  CHECK_THROWS_AS(basis_eval(*h, 4, 0.0), std::out_of_range);
  CHECK_THROWS_AS(basis_eval(*h, -1, 0.0), std::out_of_range);
  CHECK_THROWS_AS(basis_eval(*Basis::standard(3), 0, 0.0), std::invalid_argument);
}

TEST_CASE("basis construction invariants") {
  CHECK_THROWS(Basis::standard(0));
  CHECK_THROWS(Basis::standard(3, 4));
  CHECK_THROWS(Basis::hermite(0));
  CHECK_THROWS(Basis::hermite(8, 31));
  const auto h = Basis::hermite(8);
  CHECK(h->quadrature_size() == 32);
  CHECK(h->id() == "hermite:R=8:N=32");
  CHECK(Basis::standard(3)->id() == "standard:d=3:R=3");
}

TEST_CASE("quadrature Gram matrix is the identity") {
  for (int r : {1, 5, 12, 20}) {
    const auto h = Basis::hermite(r);
    const Eigen::MatrixXd& v = h->node_values();
    const Eigen::MatrixXd gram = v.transpose() * h->weights().asDiagonal() * v;
    CHECK((gram - Eigen::MatrixXd::Identity(r, r)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("Gauss-Hermite nodes for four points") {
  // Roots of H_4: +-sqrt((3 -+ sqrt 6) / 2).
  const auto h = Basis::hermite(1, 4);
  const double inner = std::sqrt((3.0 - std::sqrt(6.0)) / 2.0);
  const double outer = std::sqrt((3.0 + std::sqrt(6.0)) / 2.0);
  const Eigen::VectorXd& n = h->nodes();
  CHECK(n[0] == doctest::Approx(-outer).epsilon(1e-14));
  CHECK(n[1] == doctest::Approx(-inner).epsilon(1e-14));
  CHECK(n[2] == doctest::Approx(inner).epsilon(1e-14));
  CHECK(n[3] == doctest::Approx(outer).epsilon(1e-14));
  // Folded weights integrate the Gaussian exactly.
  double s = 0.0;
  for (int i = 0; i < 4; ++i) s += h->weights()[i] * std::exp(-n[i] * n[i]);
  CHECK(s == doctest::Approx(std::sqrt(std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("encode of synthesized basis combinations") {
  const auto h = Basis::hermite(8);
  const CoeffVec z = encode(std::function<double(double)>([&](double u) {
                              return basis_eval(*h, 0, u) + 2.0 * basis_eval(*h, 1, u);
                            }),
                            h, 2);
  CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(z[1] == doctest::Approx(2.0).epsilon(1e-13));

  const CoeffVec w = encode(std::function<double(double)>([&](double u) { return basis_eval(*h, 4, u); }), h, 4);
  CHECK(w.coeffs().cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("encode of the PDE initial datum matches dense trapezoid inner products") {
  const auto h = Basis::hermite(8);
  const auto grid = uniform_grid(-10.0, 10.0, 2001);
  std::vector<double> values;
  for (double u : grid) values.push_back(5.0 * u * std::exp(-u * u));
  const CoeffVec z = encode(GridFn(grid, values), h, 8);
  for (int j = 0; j < 8; ++j) {
    const double oracle = testsupport::trapezoid(
        [&](double u) { return 5.0 * u * std::exp(-u * u) * hermite_direct(j, u); }, -10.0, 10.0, 100001);
    CHECK(std::abs(z[j] - oracle) < 1e-6);
  }
}

TEST_CASE("encode rejects grids that do not support the quadrature rule") {
  const auto h = Basis::hermite(4);
  const auto narrow = uniform_grid(-3.0, 3.0, 601);
  CHECK_THROWS_WITH(encode(GridFn(narrow, std::vector<double>(narrow.size(), 0.0)), h, 4),
                    doctest::Contains("grid incompatible with quadrature rule"));
  const auto coarse = uniform_grid(-10.0, 10.0, 41);
  CHECK_THROWS(encode(GridFn(coarse, std::vector<double>(coarse.size(), 0.0)), h, 4));
}

TEST_CASE("lift evaluates the expansion") {
  const auto h = Basis::hermite(8);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(8);
  c[0] = 1.0;
  const GridFn at0 = lift(CoeffVec(h, c), std::vector<double>{0.0});
  CHECK(at0.values[0] == doctest::Approx(std::pow(std::numbers::pi, -0.25)));

  geoprox::RngStream rng(11);
  const Eigen::VectorXd z = testsupport::random_vector(rng, 8);
  const auto big = Basis::hermite(16);
  const CoeffVec zc(big, z);
  std::vector<double> nodes(big->nodes().begin(), big->nodes().end());
  const GridFn lifted = lift(zc, nodes);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    double naive = 0.0;
    for (int j = 0; j < 8; ++j) naive += z[j] * hermite_direct(j, nodes[i]);
    CHECK(std::abs(lifted.values[i] - naive) < 1e-12);
  }
}

TEST_CASE("round trip encode(lift(z)) = z and Parseval") {
  geoprox::RngStream rng(3);
  for (int r : {1, 4, 8, 16}) {
    const auto h = Basis::hermite(r);
    const Eigen::VectorXd z = testsupport::random_vector(rng, r);
    const Eigen::VectorXd nodal = lift_to_nodes(*h, z);
    const CoeffVec back = encode(nodal, h, r);
    CHECK((back.coeffs() - z).cwiseAbs().maxCoeff() < 1e-10);
    const double l2 = quadrature_integral(*h, nodal.cwiseAbs2());
    CHECK(std::abs(std::sqrt(l2) - z.norm()) < 1e-8);
  }
}

TEST_CASE("standard basis lift returns the padded coefficients") {
  const auto s = Basis::standard(4);
  const GridFn g = lift(CoeffVec(s, Eigen::Vector2d(1.0, 2.0)), std::vector<double>{});
  REQUIRE(g.values.size() == 4);
  CHECK(g.values[0] == 1.0);
  CHECK(g.values[1] == 2.0);
  CHECK(g.values[3] == 0.0);
}

TEST_CASE("project truncates and is idempotent") {
  const auto s = Basis::standard(3);
  const CoeffVec z(s, Eigen::Vector3d(1, 2, 3));
  const CoeffVec p = project(z, 2);
  CHECK(p.rank() == 2);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 2.0);
  CHECK((project(p, 2).coeffs() - p.coeffs()).norm() == 0.0);
  const CoeffVec padded = project_padded(z, 2);
  CHECK(padded.rank() == 3);
  CHECK(padded[2] == 0.0);
}

TEST_CASE("projection tail on an exponential ellipsoid") {
  const auto s = Basis::standard(60);
  geoprox::RngStream rng(5);
  const double c = 2.0;
  const double rate = 0.4;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd z(60);
    for (int i = 0; i < 60; ++i) z[i] = c * std::exp(-rate * i) * rng.uniform(-1.0, 1.0);
    for (int r : {2, 5, 10}) {
      const double err = (project_padded(CoeffVec(s, z), r).coeffs() - z).norm();
      CHECK(err <= c * std::exp(-rate * r) / std::sqrt(1.0 - std::exp(-2.0 * rate)) + 1e-15);
    }
  }
}

TEST_CASE("projection is 1-Lipschitz") {
  geoprox::RngStream rng(8);
  const auto s = Basis::standard(10);
  for (int trial = 0; trial < 50; ++trial) {
    const CoeffVec z(s, testsupport::random_vector(rng, 10));
    const CoeffVec w(s, testsupport::random_vector(rng, 10));
    CHECK((project(z, 4) - project(w, 4)).norm() <= (z - w).norm() + 1e-15);
  }
}

TEST_CASE("CoeffVec invariants") {
  const auto s = Basis::standard(3);
  CHECK_THROWS_AS(CoeffVec(s, Eigen::Vector4d::Zero()), std::invalid_argument);
  CHECK_THROWS_AS(CoeffVec(s, Eigen::Vector2d(1.0, std::nan(""))), std::domain_error);
  const CoeffVec a(s, Eigen::Vector2d(1, 2));
  const CoeffVec b(s, Eigen::Vector3d(1, 2, 3));
  CHECK_FALSE(a.combinable(b));
  CHECK_THROWS(a + b);
  const CoeffVec c(Basis::standard(4), Eigen::Vector2d(1, 2));
  CHECK_FALSE(a.combinable(c));
}

TEST_CASE("derivative matrix") {
  const auto h = Basis::hermite(8);
  const Eigen::MatrixXd d2 = derivative_matrix(*h, 2);
  CHECK(d2(0, 0) == 0.0);
  CHECK(d2(0, 1) == doctest::Approx(std::sqrt(0.5)));
  CHECK(d2(1, 0) == doctest::Approx(-std::sqrt(0.5)));
  CHECK(d2(1, 1) == 0.0);

  const Eigen::MatrixXd d = derivative_matrix(*h, 8);
  CHECK((d + d.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS(derivative_matrix(*Basis::standard(3), 2));
}

TEST_CASE("derivative matrix matches central differences of the lifted function") {
  const auto h = Basis::hermite(8);
  geoprox::RngStream rng(21);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(8);
  z.head(6) = testsupport::random_vector(rng, 6);
  const Eigen::VectorXd dz = derivative_matrix(*h, 8) * z;
  const double step = 1e-4;
  for (double u = -6.0; u <= 6.0; u += 0.25) {
    double plus = 0.0, minus = 0.0, exact = 0.0;
    for (int j = 0; j < 8; ++j) {
      plus += z[j] * basis_eval(*h, j, u + step);
      minus += z[j] * basis_eval(*h, j, u - step);
      exact += dz[j] * basis_eval(*h, j, u);
    }
    CHECK(std::abs((plus - minus) / (2 * step) - exact) < 1e-4);
  }
}

TEST_CASE("grid CSV round trip") {
  const GridFn g({-1.0, 0.0, 0.1}, {3.0, 1.0 / 3.0, -2.5e-17});
  std::stringstream ss;
  write_csv(ss, g);
  CHECK(ss.str().rfind("node,value\n", 0) == 0);
  const GridFn back = read_grid_csv(ss);
  CHECK(back.nodes == g.nodes);
  CHECK(back.values == g.values);
  CHECK_THROWS(GridFn({0.0, 0.0}, {1.0, 1.0}));
}
