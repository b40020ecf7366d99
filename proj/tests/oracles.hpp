#ifndef UDIFFSE_TESTS_ORACLES_HPP
#define UDIFFSE_TESTS_ORACLES_HPP

// Test-only reference computations. Nothing here calls into the code paths
// being checked.

#include <udiffse/types.hpp>

#include <cmath>
#include <complex>
#include <functional>
#include <random>

namespace oracle {

using udiffse::CMatrix;
using udiffse::Complex;

// Classical RK4 for d(var)/dt = -2 gamma var + g(t)^2, var(0) = 0, with
// g(t) = smin (smax/smin)^t sqrt(2 ln(smax/smin)).
inline double variance_ode_rk4(double gamma, double smin, double smax, double t_end, int steps) {
  const double lr = std::log(smax / smin);
  auto g2 = [&](double t) {
    const double g = smin * std::pow(smax / smin, t) * std::sqrt(2.0 * lr);
    return g * g;
  };
  auto rhs = [&](double t, double y) { return -2.0 * gamma * y + g2(t); };
  double y = 0.0;
  const double h = t_end / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = k * h;
    const double k1 = rhs(t, y);
    const double k2 = rhs(t + h / 2, y + h / 2 * k1);
    const double k3 = rhs(t + h / 2, y + h / 2 * k2);
    const double k4 = rhs(t + h, y + h * k3);
    y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return y;
}

// Complex-convention gradient of a real function of a complex matrix by
// central differences: 0.5 * (d/dRe + i d/dIm) per entry.
inline CMatrix wirtinger_fd(const std::function<double(const CMatrix&)>& f, const CMatrix& z, double h) {
  CMatrix grad(z.rows(), z.cols());
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    CMatrix zp = z, zm = z;
    zp(k) += Complex(h, 0.0);
    zm(k) -= Complex(h, 0.0);
    const double dre = (f(zp) - f(zm)) / (2 * h);
    zp = z;
    zm = z;
    zp(k) += Complex(0.0, h);
    zm(k) -= Complex(0.0, h);
    const double dim = (f(zp) - f(zm)) / (2 * h);
    grad(k) = 0.5 * Complex(dre, dim);
  }
  return grad;
}

// log N_C(z; m, var) summed over entries (E|z - m|^2 = var convention).
inline double log_complex_gaussian(const CMatrix& z, const CMatrix& m, const udiffse::RMatrix& var) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k)
    total += -std::log(M_PI * var(k)) - std::norm(z(k) - m(k)) / var(k);
  return total;
}

inline CMatrix random_complex(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  CMatrix z(rows, cols);
  for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = Complex(n(rng), n(rng));
  return z;
}

inline udiffse::RMatrix random_positive(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                        double lo = 0.2, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  udiffse::RMatrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = u(rng);
  return m;
}

}  // namespace oracle

#endif  // UDIFFSE_TESTS_ORACLES_HPP
