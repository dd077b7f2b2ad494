#pragma once

// Independent oracles shared by the unit and acceptance tests.

#include "geoprox/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

namespace testsupport {

/// Heat semigroup applied to 5u exp(-u^2): y(T,u) = 5u exp(-u^2/s) s^{-3/2}, s = 1 + 4 nu T.
inline double heat_solution(double nu, double t, double u) {
  const double s = 1.0 + 4.0 * nu * t;
  return 5.0 * u * std::exp(-u * u / s) * std::pow(s, -1.5);
}

/// Normalized Hermite function from the explicit polynomial sum in long double.
inline double hermite_direct(int n, double x) {
  long double h = 0.0L;
  long double fact_n = 1.0L;
  for (int k = 2; k <= n; ++k) fact_n *= k;
  for (int m = 0; m <= n / 2; ++m) {
    long double fm = 1.0L, fr = 1.0L;
    for (int k = 2; k <= m; ++k) fm *= k;
    for (int k = 2; k <= n - 2 * m; ++k) fr *= k;
    const long double term = std::pow(2.0L * x, static_cast<long double>(n - 2 * m)) / (fm * fr);
    h += (m % 2 ? -term : term);
  }
  h *= fact_n;
  const long double norm = std::sqrt(std::pow(2.0L, static_cast<long double>(n)) * fact_n *
                                     std::sqrt(std::numbers::pi_v<long double>));
  return static_cast<double>(h * std::exp(-0.5L * x * x) / norm);
}

/// Composite trapezoid rule of h over [lo, hi] with n points.
inline double trapezoid(const std::function<double(double)>& h, double lo, double hi, int n) {
  const double step = (hi - lo) / (n - 1);
  double s = 0.5 * (h(lo) + h(hi));
  for (int i = 1; i < n - 1; ++i) s += h(lo + i * step);
  return s * step;
}

/// Minimizer of x^T A x / 2 + b^T x over the box [lo, hi]^d by enumerating
/// every free / lower / upper assignment (3^d candidates).
inline Eigen::VectorXd box_qp_oracle(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lo, double hi) {
  const int d = static_cast<int>(b.size());
  int total = 1;
  for (int i = 0; i < d; ++i) total *= 3;
  Eigen::VectorXd best;
  double best_val = std::numeric_limits<double>::infinity();
  for (int code = 0; code < total; ++code) {
    std::vector<int> state(d);
    int c = code;
    for (int i = 0; i < d; ++i) {
      state[i] = c % 3;
      c /= 3;
    }
    Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
    std::vector<int> free;
    for (int i = 0; i < d; ++i) {
      if (state[i] == 1) x[i] = lo;
      if (state[i] == 2) x[i] = hi;
      if (state[i] == 0) free.push_back(i);
    }
    if (!free.empty()) {
      const int k = static_cast<int>(free.size());
      Eigen::MatrixXd af(k, k);
      Eigen::VectorXd rhs(k);
      for (int i = 0; i < k; ++i) {
        rhs[i] = -b[free[i]];
        for (int j = 0; j < d; ++j) {
          if (state[j] != 0) rhs[i] -= a(free[i], j) * x[j];
        }
        for (int j = 0; j < k; ++j) af(i, j) = a(free[i], free[j]);
      }
      const Eigen::VectorXd sol = af.ldlt().solve(rhs);
      for (int i = 0; i < k; ++i) x[free[i]] = sol[i];
    }
    if ((x.array() < lo - 1e-12).any() || (x.array() > hi + 1e-12).any()) continue;
    x = x.cwiseMax(lo).cwiseMin(hi);
    const double val = 0.5 * x.dot(a * x) + b.dot(x);
    if (val < best_val) {
      best_val = val;
      best = x;
    }
  }
  return best;
}

inline Eigen::VectorXd random_vector(geoprox::RngStream& rng, int n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

inline Eigen::MatrixXd random_matrix(geoprox::RngStream& rng, int rows, int cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  }
  return m;
}

/// Symmetric positive definite G^T G / n + shift I.
inline Eigen::MatrixXd random_spd(geoprox::RngStream& rng, int n, double shift) {
  const Eigen::MatrixXd g = random_matrix(rng, n, n);
  return g.transpose() * g / n + shift * Eigen::MatrixXd::Identity(n, n);
}

}  // namespace testsupport
