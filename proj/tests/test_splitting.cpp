#include "geoprox/splitting.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace geoprox;

namespace {

ObjectiveG half_norm(int d) { return separable_quadratic(Eigen::VectorXd::Ones(d), Eigen::VectorXd::Zero(d)); }

}  // namespace

TEST_CASE("ObjectiveG rejects an inconsistent gradient") {
  CHECK_THROWS_AS(ObjectiveG(
                      2, [](const Eigen::VectorXd& x) { return x.squaredNorm(); },
                      [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x; }, 2.0),
                  std::invalid_argument);
  const ObjectiveG ok(
      2, [](const Eigen::VectorXd& x) { return x.squaredNorm(); },
      [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return 2 * x; }, 2.0);
  CHECK(ok.has_gradient());
  CHECK(linear_objective(Eigen::Vector2d(1, 2)).lipschitz() == 1e-12);
}

TEST_CASE("restricted g pads with zeros") {
  const ObjectiveG g = separable_quadratic(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(1, 1, 1));
  const ObjectiveG r = g.restricted(2);
  CHECK(r.dim() == 2);
  CHECK(r(Eigen::Vector2d(1, 1)) == doctest::Approx(g(Eigen::Vector3d(1, 1, 0))));
  CHECK(r.gradient(Eigen::Vector2d(0, 0)).size() == 2);
}

TEST_CASE("fd_grad closed forms") {
  const auto s = Basis::standard(4);
  const Eigen::Vector4d c(1.0, -2.0, 0.5, 3.0);
  const CoeffVec x(s, Eigen::Vector4d(0.3, 0.1, -0.7, 2.0));
  const CoeffVec lin = fd_grad(linear_objective(c), x, 0.37, 3);
  for (int i = 0; i < 3; ++i) CHECK(lin[i] == doctest::Approx(c[i]).epsilon(1e-13));
  CHECK(lin[3] == 0.0);
  const double delta = 1e-3;
  const CoeffVec sq = fd_grad(half_norm(4), x, delta, 4);
  for (int i = 0; i < 4; ++i) CHECK(sq[i] == doctest::Approx(x[i] + delta / 2).epsilon(1e-9));
}

TEST_CASE("fd_grad error bound on the ellipsoidal family") {
  const ObjectiveG g = ellipsoidal_objective(30, 0.5);
  geoprox::RngStream rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x(30);
    for (int i = 0; i < 30; ++i) x[i] = rng.uniform(-1.0, 1.0);
    for (int r : {4, 8}) {
      for (double delta : {1e-2, 1e-3}) {
        const auto rows = fd_error_sweep(g, x, {r}, {delta});
        // Second derivative along e_i is bounded by cosh(2) for |x_i + t| <= 2.
        const double c_tilde = 0.5 * std::cosh(2.0);
        CHECK(rows[0].error <= 2.0 * (r * delta * c_tilde + rows[0].tail));
      }
    }
  }
}

TEST_CASE("divided difference Lipschitz ratio") {
  const ObjectiveG g = ellipsoidal_objective(10, 0.3);
  geoprox::RngStream rng(43);
  const int r = 6;
  const double delta = 1e-2;
  // Value-Lipschitz constant of g on the ball ||x||_inf <= 1.5 (plus delta).
  double lam_g = 0.0;
  for (int i = 0; i < 10; ++i) lam_g += std::pow(std::exp(-0.3 * i) * std::sinh(1.51), 2);
  lam_g = std::sqrt(lam_g);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd x(10), y(10);
    for (int i = 0; i < 10; ++i) {
      x[i] = rng.uniform(-1.5, 1.5);
      y[i] = rng.uniform(-1.5, 1.5);
    }
    const double ratio = (fd_grad(g, x, delta, r) - fd_grad(g, y, delta, r)).norm() / (x - y).norm();
    CHECK(ratio <= 2.0 * r * lam_g / delta);
  }
}

TEST_CASE("fb_step examples") {
  const auto s = Basis::standard(2);
  const ProxFn box = ProxFn::box(-1.0, 1.0);
  const ObjectiveG g = separable_quadratic(Eigen::Vector2d(1, 1), Eigen::Vector2d(2, 0.5));
  CoeffVec x = CoeffVec::zeros(s, 2);
  for (int k = 0; k < 200; ++k) x = fb_step(x, box, g, 1.0, 0.9);
  CHECK(x[0] == doctest::Approx(1.0));
  CHECK(x[1] == doctest::Approx(0.5));

  const CoeffVec star(s, Eigen::Vector2d(1.0, 0.5));
  CHECK((fb_step(star, box, g, 1.0, 0.9).coeffs() - star.coeffs()).norm() < 1e-15);

  CHECK_THROWS(fb_step(star, box, g, 0.0, 0.5));
  const CoeffVec y(s, Eigen::Vector2d(0.8, -0.4));
  CHECK((fb_step(y, ProxFn::zero(), half_norm(2), 1.0, 0.5).coeffs() - y.coeffs() / 2).norm() < 1e-16);
}

TEST_CASE("approx and projected steps") {
  geoprox::RngStream rng(47);
  const auto s = Basis::standard(4);
  const ProxFn box = ProxFn::box(-1.0, 1.0);
  const Eigen::MatrixXd a = testsupport::random_spd(rng, 4, 0.5);
  const Eigen::VectorXd b = testsupport::random_vector(rng, 4);
  const ObjectiveG quad = quadratic_objective(a, b, 0.0);
  const ObjectiveG lin = linear_objective(b);
  const CoeffVec x(s, testsupport::random_vector(rng, 4, 0.5));

  CHECK((approx_fb_step(x, box, lin, 0.7, 0.3, 0.1, 4).coeffs() - fb_step(x, box, lin, 0.7, 0.3).coeffs()).norm() <
        1e-13);
  CHECK((approx_fb_step(x, box, quad, 0.7, 0.3, 1e-8, 4).coeffs() - fb_step(x, box, quad, 0.7, 0.3).coeffs()).norm() <
        1e-6);

  std::vector<double> errs;
  for (double delta : {1e-2, 1e-3, 1e-4}) {
    errs.push_back((approx_fb_step(x, ProxFn::zero(), quad, 0.7, 0.3, delta, 4).coeffs() -
                    fb_step(x, ProxFn::zero(), quad, 0.7, 0.3).coeffs())
                       .norm());
  }
  CHECK(errs[0] / errs[1] == doctest::Approx(10.0).epsilon(0.05));
  CHECK(errs[1] / errs[2] == doctest::Approx(10.0).epsilon(0.05));

  CHECK(projected_fb_step(x, box, quad, 0.7, 0.3, 1e-3, 4).coeffs() ==
        approx_fb_step(x, box, quad, 0.7, 0.3, 1e-3, 4).coeffs());

  Eigen::VectorXd low = x.coeffs();
  low.tail(2).setZero();
  const CoeffVec p = projected_fb_step(CoeffVec(s, low), ProxFn::zero(), quad, 0.7, 0.3, 1e-3, 2);
  CHECK(p[2] == 0.0);
  CHECK(p[3] == 0.0);
}

TEST_CASE("projected step on the hermite basis stays in E_R") {
  const auto h = Basis::hermite(12);
  geoprox::RngStream rng(53);
  const ObjectiveG g = separable_quadratic(Eigen::VectorXd::Ones(12), testsupport::random_vector(rng, 12));
  Eigen::VectorXd zc = testsupport::random_vector(rng, 12);
  zc.tail(4).setZero();
  const CoeffVec z(h, zc);
  const CoeffVec out = projected_fb_step(z, ProxFn::box(-0.3, 0.3), g, 0.5, 0.4, 1e-4, 8);
  CHECK(out.coeffs().tail(4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decay schedule values") {
  const SplitSchedule s3 = decay_schedule(3, 1.0, 2.0, 1);
  REQUIRE(s3.alphas.size() == 4);
  CHECK(s3.alphas[0] == std::ldexp(1.0, -3));
  CHECK(s3.alphas[1] == std::ldexp(1.0, -4));
  CHECK(s3.alphas[2] == std::ldexp(1.0, -5));
  CHECK(s3.alphas[3] == std::ldexp(1.0, -6));
  CHECK(s3.lambdas[0] == 0.25);
  CHECK(decay_schedule(2, 2.0, 1.0, 1).alphas[0] == 0.125);
  for (int l : {1, 5, 12}) {
    for (double c : {0.0, 1.0, 3.0}) {
      const SplitSchedule s = decay_schedule(l, c, 4.0, 3);
      CHECK(s.decay_compliant());
      CHECK_NOTHROW(s.validate(4.0));
    }
  }
  CHECK(ramp_schedule(8, 1.0, 2).ramp_compliant());
  CHECK_NOTHROW(ramp_schedule(8, 1.0, 2).validate(1.0));
}

TEST_CASE("schedule validation") {
  SplitSchedule s = constant_schedule(3, 1.0, 0.5, 1e-3, 2);
  CHECK_NOTHROW(s.validate(1.0));
  CHECK_THROWS(s.validate(2.5));  // lambda must stay below 1/lipschitz
  s.alphas[1] = 0.0;
  CHECK_THROWS(s.validate(1.0));
  SplitSchedule d = decay_schedule(4, 1.0, 1.0, 1);
  d.alphas[0] *= 2.0;
  CHECK_THROWS(d.validate(1.0));
}

TEST_CASE("run_scheme") {
  const auto s = Basis::standard(3);
  const ProxFn box = ProxFn::box(-1.0, 1.0);
  const Eigen::Vector3d center(2.0, -0.3, -4.0);
  const ObjectiveG g = separable_quadratic(Eigen::Vector3d(1.0, 2.0, 0.5), center);
  const CoeffVec x0 = CoeffVec::zeros(s, 3);

  const Trajectory empty = run_scheme(x0, constant_schedule(0, 1.0, 0.25, 1e-6, 3), box, g, Scheme::Exact);
  CHECK(empty.iterates.size() == 1);

  const Trajectory t = run_scheme(x0, constant_schedule(200, 1.0, 0.25, 1e-6, 3), box, g, Scheme::Exact);
  const Eigen::Vector3d star(1.0, -0.3, -1.0);
  const double optimum = objective_value(box, g, CoeffVec(s, star));
  CHECK(t.losses.back() - optimum <= 1e-6);
  CHECK(t.losses.back() - optimum >= -1e-12);

  // L * gap(L) stays bounded.
  double worst = 0.0;
  for (int l : {20, 40, 80, 160}) {
    const Trajectory tl = run_scheme(x0, constant_schedule(l, 1.0, 0.25, 1e-6, 3), box, g, Scheme::Exact);
    worst = std::max(worst, l * (tl.losses.back() - optimum));
  }
  const Trajectory t20 = run_scheme(x0, constant_schedule(20, 1.0, 0.25, 1e-6, 3), box, g, Scheme::Exact);
  CHECK(worst <= 20.0 * (t20.losses.back() - optimum) + 1e-12);

  const Trajectory proj = run_scheme(x0, constant_schedule(30, 1.0, 0.25, 1e-4, 2), box, g, Scheme::Projected);
  for (const auto& z : proj.iterates) CHECK(z[2] == 0.0);
}

TEST_CASE("random box quadratics decay at least like 1/L with slack 1/2") {
  geoprox::RngStream rng(59);
  for (int k = 0; k < 50; ++k) {
    const int d = 2 + static_cast<int>(rng.bits() % 7);
    const auto s = Basis::standard(d);
    const Eigen::MatrixXd a = testsupport::random_spd(rng, d, 0.2);
    const Eigen::VectorXd b = testsupport::random_vector(rng, d, 2.0);
    const ObjectiveG g = quadratic_objective(a, b, 0.0);
    const ProxFn box = ProxFn::box(-1.0, 1.0);
    const Eigen::VectorXd star = testsupport::box_qp_oracle(a, b, -1.0, 1.0);
    const double optimum = objective_value(box, g, CoeffVec(s, star));
    const double lam = 0.5 / g.lipschitz();
    const CoeffVec x0(s, testsupport::random_vector(rng, d).cwiseMax(-1.0).cwiseMin(1.0));
    const double gap20 = run_scheme(x0, constant_schedule(20, 1.0, lam, 1e-6, d), box, g, Scheme::Exact).losses.back() - optimum;
    const double gap160 = run_scheme(x0, constant_schedule(160, 1.0, lam, 1e-6, d), box, g, Scheme::Exact).losses.back() - optimum;
    CHECK(gap160 <= 0.5 * (20.0 / 160.0) * gap20 + 1e-12);
  }
}

TEST_CASE("reference minimizer agrees with the active-set oracle") {
  geoprox::RngStream rng(61);
  for (int k = 0; k < 20; ++k) {
    const int d = 2 + static_cast<int>(rng.bits() % 4);
    const auto s = Basis::standard(d);
    const Eigen::MatrixXd a = testsupport::random_spd(rng, d, 0.3);
    const Eigen::VectorXd b = testsupport::random_vector(rng, d, 2.0);
    const CoeffVec x = reference_minimizer(CoeffVec::zeros(s, d), ProxFn::box(-1.0, 1.0), quadratic_objective(a, b, 0.0),
                                           200000);
    CHECK((x.coeffs() - testsupport::box_qp_oracle(a, b, -1.0, 1.0)).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("deviation report") {
  geoprox::RngStream rng(67);
  const auto s = Basis::standard(5);
  const ObjectiveG g = quadratic_objective(testsupport::random_spd(rng, 5, 0.2), testsupport::random_vector(rng, 5), 0.0);
  const ProxFn box = ProxFn::box(-1.0, 1.0);
  const CoeffVec x0(s, testsupport::random_vector(rng, 5, 0.3));

  const DeviationReport full = deviation_report(x0, decay_schedule(10, 1.0, g.lipschitz(), 5), box, g);
  CHECK(full.approx_vs_projected == 0.0);
  CHECK(full.rule == ScheduleRule::Decay);

  const DeviationReport part = deviation_report(x0, decay_schedule(10, 1.0, g.lipschitz(), 3), box, g);
  CHECK(part.approx_vs_projected <= std::ldexp(1.0, -9));

  SplitSchedule coarse = constant_schedule(10, 0.5, 0.5 / g.lipschitz(), 1e-2, 5);
  SplitSchedule fine = coarse;
  fine.delta = 1e-3;
  const double e1 = deviation_report(x0, coarse, box, g).exact_vs_approx;
  const double e2 = deviation_report(x0, fine, box, g).exact_vs_approx;
  CHECK(e2 < 0.2 * e1);
  CHECK(e2 > 0.05 * e1);
}

TEST_CASE("divergence is flagged") {
  const auto s = Basis::standard(1);
  // The declared Lipschitz bound understates the true curvature 10, so
  // lambda = 5 passes validation and the iteration multiplies x by -49.
  SplitSchedule bad = constant_schedule(200, 1.0, 5.0, 1e-6, 1);
  const ObjectiveG g(
      1, [](const Eigen::VectorXd& x) { return 5.0 * x.squaredNorm(); },
      [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return 10.0 * x; }, 0.1);
  const Trajectory t = run_scheme(CoeffVec(s, Eigen::VectorXd::Ones(1)), bad, ProxFn::zero(), g, Scheme::Exact);
  CHECK(t.diverged);
  CHECK(t.final().coeffs().allFinite());
}
