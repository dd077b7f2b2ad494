#include "geoprox/prox.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace geoprox;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

std::vector<ProxFn> catalog() {
  return {ProxFn::zero(), ProxFn::box(-1.0, 1.0), ProxFn::box(0.0, kInf), ProxFn::l1(0.7), ProxFn::quadratic(1.5),
          ProxFn::reaction()};
}

// Golden-section minimization of tau * fn_scalar(s) + (s - u)^2 / 2 on [lo, hi].
double golden_prox(const ProxFn& f, double tau, double u, double lo, double hi) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto obj = [&](double s) { return tau * fn_scalar(f, s) + 0.5 * (s - u) * (s - u); };
  double a = lo, b = hi;
  for (int k = 0; k < 300; ++k) {
    const double c = b - phi * (b - a);
    const double d = a + phi * (b - a);
    if (obj(c) <= obj(d)) {
      b = d;
    } else {
      a = c;
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

TEST_CASE("closed forms on the standard basis") {
  const auto s = Basis::standard(3);
  const CoeffVec relu = prox_eval(ProxFn::box(0.0, kInf), 3.0, CoeffVec(s, Eigen::Vector2d(-1.0, 2.0)));
  CHECK(relu[0] == 0.0);
  CHECK(relu[1] == 2.0);

  const CoeffVec soft = prox_eval(ProxFn::l1(1.0), 1.0, CoeffVec(s, Eigen::Vector3d(2.0, -0.5, 0.0)));
  CHECK(soft[0] == 1.0);
  CHECK(soft[1] == 0.0);
  CHECK(soft[2] == 0.0);

  const Eigen::Vector3d x(0.3, -7.0, 2.5);
  const CoeffVec half = prox_eval(ProxFn::quadratic(1.0), 1.0, CoeffVec(s, x));
  CHECK((half.coeffs() - x / 2).norm() < 1e-15);
}

TEST_CASE("reaction prox solves the resolvent") {
  CHECK(prox_scalar(ProxFn::reaction(), 1.0, -0.6) == doctest::Approx(-0.4).epsilon(1e-15));
  CHECK(prox_scalar(ProxFn::reaction(), 1.0, 0.8) == 0.8);
  // Golden-section on function values resolves the minimizer to ~sqrt(eps).
  CHECK(std::abs(golden_prox(ProxFn::reaction(), 1.0, -0.6, -3.0, 3.0) - (-0.4)) < 1e-7);
  // The alternate printed form differs from the solve.
  CHECK(prox_scalar(ProxFn::reaction(true), 1.0, -0.6) == doctest::Approx(-0.45));
}

TEST_CASE("brute force examples") {
  const auto s = Basis::standard(1);
  const double res = 1e-4;
  CHECK(std::abs(prox_bruteforce(ProxFn::l1(1.0), 2.0, CoeffVec(s, Eigen::VectorXd::Constant(1, 3.0)), res)[0] - 1.0) <=
        res);
  CHECK(std::abs(prox_bruteforce_scalar(ProxFn::reaction(), 0.5, -1.0, res) - (-0.8)) <= res);
  CHECK(std::abs(prox_bruteforce_scalar(ProxFn::box(-1.0, 1.0), 1.0, 4.2, res) - 1.0) <= res);
}

TEST_CASE("closed forms agree with golden-section search") {
  // Tolerance is the search resolution, sqrt(eps) times the bracket scale.
  geoprox::RngStream rng(17);
  for (const ProxFn& f : catalog()) {
    for (double tau : {0.1, 1.0, 10.0}) {
      for (int k = 0; k < 50; ++k) {
        const double u = 4.0 * rng.normal();
        double lo = u - 50.0, hi = u + 50.0;
        if (f.kind == ProxKind::Box) {
          lo = std::max(lo, f.lo);
          hi = std::min(hi, f.hi);
          if (lo > hi) lo = hi = (u < f.lo ? f.lo : f.hi);
        }
        CHECK(std::abs(prox_scalar(f, tau, u) - golden_prox(f, tau, u, lo, hi)) < 1e-6);
      }
    }
  }
}

TEST_CASE("firm nonexpansiveness and 1-Lipschitz on both bases") {
  geoprox::RngStream rng(23);
  const auto s = Basis::standard(6);
  const auto h = Basis::hermite(8);
  for (const ProxFn& f : catalog()) {
    for (const BasisPtr& basis : {s, h}) {
      const int r = basis->is_hermite() ? 8 : 6;
      for (double tau : {0.1, 1.0, 10.0}) {
        for (int k = 0; k < 100; ++k) {
          const CoeffVec x(basis, testsupport::random_vector(rng, r, 2.0));
          const CoeffVec y(basis, testsupport::random_vector(rng, r, 2.0));
          const Eigen::VectorXd px = prox_eval(f, tau, x).coeffs();
          const Eigen::VectorXd py = prox_eval(f, tau, y).coeffs();
          const Eigen::VectorXd dp = px - py;
          const Eigen::VectorXd dx = x.coeffs() - y.coeffs();
          CHECK(dp.squaredNorm() <= dp.dot(dx) + 1e-12);
          CHECK(dp.norm() <= dx.norm() + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("quadratic prox satisfies y + tau c y = x") {
  geoprox::RngStream rng(29);
  const auto s = Basis::standard(5);
  for (double c : {0.5, 2.0}) {
    for (double tau : {0.1, 1.0, 10.0}) {
      const Eigen::VectorXd x = testsupport::random_vector(rng, 5);
      const Eigen::VectorXd y = prox_eval(ProxFn::quadratic(c), tau, CoeffVec(s, x)).coeffs();
      CHECK((y + tau * c * y - x).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
}

TEST_CASE("hermite pointwise prox acts on nodal values") {
  const auto h = Basis::hermite(6);
  geoprox::RngStream rng(31);
  const Eigen::VectorXd z = testsupport::random_vector(rng, 6);
  const Eigen::VectorXd nodal = lift_to_nodes(*h, z);
  Eigen::VectorXd clipped(nodal.size());
  for (Eigen::Index i = 0; i < nodal.size(); ++i) clipped[i] = std::clamp(nodal[i], -0.2, 0.2);
  const Eigen::VectorXd expect = encode_from_nodes(*h, clipped, 6);
  const Eigen::VectorXd got = prox_apply(ProxFn::box(-0.2, 0.2), 1.0, *h, z);
  CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("sigma_f") {
  const auto s = Basis::standard(4);
  const Eigen::Vector4d x(2.0, -0.5, 1.5, -3.0);
  const CoeffVec id = sigma_f(ProxFn::zero(), 1.0, CoeffVec(s, x), 2);
  CHECK(id[0] == 2.0);
  CHECK(id[1] == -0.5);
  CHECK(id[2] == 0.0);
  const CoeffVec act = sigma_f(ProxFn::l1(1.0), 1.0, CoeffVec(s, x), 2);
  CHECK(act[0] == 1.0);
  CHECK(act[1] == 0.0);
  CHECK(act[2] == 0.0);
  const CoeffVec relu = sigma_f(ProxFn::box(0.0, kInf), 1.0, CoeffVec(s, x), 4);
  CHECK(relu.coeffs() == Eigen::Vector4d(2.0, 0.0, 1.5, 0.0));
}

TEST_CASE("fn_value") {
  const auto s = Basis::standard(2);
  CHECK(fn_value(ProxFn::box(-1.0, 1.0), CoeffVec(s, Eigen::Vector2d(0.5, -0.2))) == 0.0);
  CHECK(fn_value(ProxFn::box(-1.0, 1.0), CoeffVec(s, Eigen::Vector2d(1.5, 0.0))) == kInf);
  CHECK(fn_value(ProxFn::l1(1.0), CoeffVec(s, Eigen::Vector2d(2.0, -3.0))) == 5.0);
  CHECK(fn_value(ProxFn::quadratic(2.0), CoeffVec(s, Eigen::Vector2d(1.0, 2.0))) == 5.0);
}

TEST_CASE("subgradient convention at kinks") {
  CHECK(prox_scalar_derivative(ProxFn::box(-1.0, 1.0), 1.0, 1.0) == 1.0);
  CHECK(prox_scalar_derivative(ProxFn::box(-1.0, 1.0), 1.0, -1.0) == 1.0);
  CHECK(prox_scalar_derivative(ProxFn::box(-1.0, 1.0), 1.0, 1.5) == 0.0);
  CHECK(prox_scalar_derivative(ProxFn::l1(1.0), 2.0, 2.0) == 0.0);
  CHECK(prox_scalar_derivative(ProxFn::l1(1.0), 2.0, 2.5) == 1.0);
  CHECK(prox_scalar_derivative(ProxFn::reaction(), 1.0, 0.0) == 1.0);
  CHECK(prox_scalar_derivative(ProxFn::reaction(), 2.0, -1.0) == doctest::Approx(0.5));
}

TEST_CASE("prox_vjp matches finite differences of prox_apply") {
  geoprox::RngStream rng(37);
  const auto h = Basis::hermite(6);
  const auto s = Basis::standard(6);
  for (const ProxFn& f : catalog()) {
    for (const BasisPtr& basis : {s, h}) {
      const Eigen::VectorXd x = testsupport::random_vector(rng, 6, 1.5);
      const Eigen::VectorXd v = testsupport::random_vector(rng, 6);
      const Eigen::VectorXd an = prox_vjp(f, 0.7, *basis, x, v);
      for (int i = 0; i < 6; ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += 1e-7;
        xm[i] -= 1e-7;
        const double fd = v.dot(prox_apply(f, 0.7, *basis, xp) - prox_apply(f, 0.7, *basis, xm)) / 2e-7;
        // Crossing a kink inside the stencil makes the difference meaningless.
        if (std::abs(fd - an[i]) > 1e-5) {
          bool kink = false;
          const Eigen::VectorXd pts = basis->is_hermite() ? lift_to_nodes(*basis, x) : x;
          for (double k : prox_kinks(f, 0.7)) kink = kink || (pts.array() - k).abs().minCoeff() < 1e-5;
          CHECK(kink);
        }
      }
    }
  }
}

TEST_CASE("invalid construction") {
  CHECK_THROWS(ProxFn::box(1.0, 1.0));
  CHECK_THROWS(ProxFn::box(2.0, 1.0));
  CHECK_THROWS(prox_eval(ProxFn::l1(1.0), 0.0, CoeffVec(Basis::standard(1), Eigen::VectorXd::Zero(1))));
}
