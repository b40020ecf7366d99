#ifndef UDIFFSE_METRICS_HPP
#define UDIFFSE_METRICS_HPP

#include "udiffse/sampler.hpp"
#include "udiffse/spectral.hpp"

#include <cmath>
#include <stdexcept>

namespace udiffse {

inline constexpr double kSiSdrCapDb = 100.0;

/// Scale-invariant SDR in dB, no mean removal. A zero residual maps to the
/// 100 dB cap.
template <typename DerivedE, typename DerivedR>
typename DerivedE::Scalar si_sdr(const Eigen::MatrixBase<DerivedE>& estimate,
                                 const Eigen::MatrixBase<DerivedR>& reference) {
  using Scalar = typename DerivedE::Scalar;
  if (estimate.size() != reference.size())
    throw std::invalid_argument("si_sdr: estimate and reference lengths differ");
  const Scalar ref_energy = reference.squaredNorm();
  if (!(ref_energy > 0)) throw std::invalid_argument("si_sdr: zero-energy reference");
  const Scalar alpha = estimate.dot(reference) / ref_energy;
  const auto target = (alpha * reference).eval();
  const Scalar target_energy = target.squaredNorm();
  const Scalar residual_energy = (target - estimate).squaredNorm();
  if (residual_energy == 0) return Scalar(kSiSdrCapDb);
  if (target_energy == 0) return -Scalar(kSiSdrCapDb);
  return std::min(Scalar(kSiSdrCapDb), Scalar(10) * std::log10(target_energy / residual_energy));
}

inline double si_sdr(const Waveform& estimate, const Waveform& reference) {
  return si_sdr(estimate.samples, reference.samples);
}

/// Wall seconds per second of audio.
inline double rtf(const RunStats& stats) {
  if (!(stats.audio_duration > 0.0)) throw std::invalid_argument("rtf: audio duration must be positive");
  return stats.wall_time / stats.audio_duration;
}

struct EvalResult {
  double si_sdr_db = 0.0;
  double rtf = 0.0;
};

}  // namespace udiffse

#endif  // UDIFFSE_METRICS_HPP
