#ifndef UDIFFSE_SDE_HPP
#define UDIFFSE_SDE_HPP

#include "udiffse/spectral.hpp"
#include "udiffse/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace udiffse {

/// Forward SDE ds = -gamma * s dt + g(t) dw with an exponentially
/// interpolated diffusion coefficient g(t) between sigma_min and sigma_max.
///
/// The perturbation kernel is N_C(delta_t * s, sigma(t)^2 I) with
/// delta_t = exp(-gamma t) and sigma(t)^2 the solution of
///   d sigma^2 / dt = -2 gamma sigma^2 + g(t)^2,   sigma^2(0) = 0,
/// which for this g(t) is
///   sigma_min^2 (rho^{2t} - e^{-2 gamma t}) ln(rho) / (gamma + ln(rho)),  rho = sigma_max / sigma_min.
template <typename Scalar = double>
struct DiffusionSchedule {
  Scalar gamma = Scalar(1.5);
  Scalar sigma_min = Scalar(0.05);
  Scalar sigma_max = Scalar(0.5);
  int n_steps = 30;

  void validate() const {
    if (!(gamma > 0)) throw std::invalid_argument("schedule: gamma must be positive");
    if (!(sigma_min > 0 && sigma_min < sigma_max))
      throw std::invalid_argument("schedule: need 0 < sigma_min < sigma_max");
    if (n_steps < 2) throw std::invalid_argument("schedule: n_steps must be >= 2");
  }

  Scalar log_ratio() const { return std::log(sigma_max / sigma_min); }
};

template <typename Scalar = double>
struct ScheduleCoefficients {
  Scalar delta;
  Scalar sigma_sq;
  Scalar g;
  Scalar drift_scale;
};

template <typename Scalar>
ScheduleCoefficients<Scalar> schedule_coefficients(const DiffusionSchedule<Scalar>& sched, Scalar t) {
  if (!(t >= 0 && t <= 1))
    throw std::invalid_argument("schedule_coefficients: t = " + std::to_string(double(t)) +
                                " outside [0, 1]");
  using std::exp;
  using std::expm1;
  using std::pow;
  using std::sqrt;
  const Scalar lr = sched.log_ratio();
  const Scalar gamma = sched.gamma;
  ScheduleCoefficients<Scalar> c;
  c.delta = exp(-gamma * t);
  c.g = sched.sigma_min * pow(sched.sigma_max / sched.sigma_min, t) * sqrt(Scalar(2) * lr);
  // rho^{2t} - e^{-2 gamma t} = e^{-2 gamma t} * expm1(2 t (ln rho + gamma)); exact zero at t = 0.
  c.sigma_sq = sched.sigma_min * sched.sigma_min * exp(-Scalar(2) * gamma * t) *
               expm1(Scalar(2) * t * (lr + gamma)) * lr / (gamma + lr);
  c.drift_scale = -gamma;
  return c;
}

/// Draw s_t ~ N_C(delta_t s, sigma(t)^2 I).
inline CMatrix perturb(const CMatrix& s, double t, const DiffusionSchedule<double>& sched, Rng& rng) {
  const auto c = schedule_coefficients(sched, t);
  if (c.sigma_sq == 0.0) return c.delta * s;
  return c.delta * s + std::sqrt(c.sigma_sq) * complex_normal(s.rows(), s.cols(), rng);
}

/// Posterior-mean estimate of s_0 from s_t and the score at (s_t, t).
template <typename DerivedS, typename DerivedScore>
CMatrix tweedie_estimate(const Eigen::MatrixBase<DerivedS>& s_t, double t,
                         const DiffusionSchedule<double>& sched,
                         const Eigen::MatrixBase<DerivedScore>& score) {
  if (s_t.rows() != score.rows() || s_t.cols() != score.cols())
    throw std::invalid_argument("tweedie_estimate: score shape differs from state");
  const auto c = schedule_coefficients(sched, t);
  if (c.sigma_sq == 0.0) return s_t / c.delta;
  return (s_t + c.sigma_sq * score) / c.delta;
}

}  // namespace udiffse

#endif  // UDIFFSE_SDE_HPP
