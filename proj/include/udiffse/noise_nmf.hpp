#ifndef UDIFFSE_NOISE_NMF_HPP
#define UDIFFSE_NOISE_NMF_HPP

#include "udiffse/types.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace udiffse {

/// Noise power model n ~ N_C(0, diag(vec(W H))) with nonnegative low-rank
/// factors. Every entry is kept at or above `floor`.
template <typename Scalar = double>
struct NmfModel {
  RealMatrix<Scalar> W;  // F x K
  RealMatrix<Scalar> H;  // K x T
  Scalar floor = Scalar(1e-10);

  Eigen::Index rank() const { return W.cols(); }
  Eigen::Index bins() const { return W.rows(); }
  Eigen::Index frames() const { return H.cols(); }

  /// W H as an F x T matrix.
  RealMatrix<Scalar> variance() const { return W * H; }
  /// vec(W H), column-major, length F*T.
  RealVector<Scalar> noise_variance() const { return variance().reshaped(); }

  void validate() const {
    if (W.cols() != H.rows()) throw std::invalid_argument("nmf: W and H ranks differ");
    if (W.size() == 0 || H.size() == 0) throw std::invalid_argument("nmf: empty factors");
    if (!(floor > 0)) throw std::invalid_argument("nmf: floor must be positive");
    if ((W.array() < floor).any() || (H.array() < floor).any())
      throw std::invalid_argument("nmf: factor entries below floor");
  }
};

/// Itakura-Saito divergence sum(V/Vh - ln(V/Vh) - 1). A zero entry of V makes
/// the divergence infinite.
template <typename DerivedV, typename DerivedVh>
typename DerivedV::Scalar is_divergence(const Eigen::MatrixBase<DerivedV>& V,
                                        const Eigen::MatrixBase<DerivedVh>& V_hat) {
  using Scalar = typename DerivedV::Scalar;
  if (V.rows() != V_hat.rows() || V.cols() != V_hat.cols())
    throw std::invalid_argument("is_divergence: shape mismatch");
  if ((V_hat.array() <= 0).any()) throw std::invalid_argument("is_divergence: nonpositive model entry");
  if ((V.array() < 0).any()) throw std::invalid_argument("is_divergence: negative data entry");
  Scalar d(0);
  for (Eigen::Index j = 0; j < V.cols(); ++j)
    for (Eigen::Index i = 0; i < V.rows(); ++i) {
      const Scalar r = V(i, j) / V_hat(i, j);
      if (r == 0) return std::numeric_limits<Scalar>::infinity();
      d += r - std::log(r) - Scalar(1);
    }
  return d;
}

/// Random init: factors drawn from U(0.5, 1.5) and rescaled so that
/// mean(W H) = target_mean_power (typically mean(|x|^2) / 2).
template <typename Scalar = double>
NmfModel<Scalar> init_nmf(Eigen::Index bins, Eigen::Index frames, Eigen::Index rank,
                          Scalar target_mean_power, Rng& rng, Scalar floor = Scalar(1e-10)) {
  if (bins < 1 || frames < 1 || rank < 1) throw std::invalid_argument("init_nmf: dimensions must be positive");
  if (!(target_mean_power > 0)) throw std::invalid_argument("init_nmf: target power must be positive");
  std::uniform_real_distribution<Scalar> u(Scalar(0.5), Scalar(1.5));
  NmfModel<Scalar> m;
  m.floor = floor;
  m.W.resize(bins, rank);
  m.H.resize(rank, frames);
  for (Eigen::Index j = 0; j < rank; ++j)
    for (Eigen::Index i = 0; i < bins; ++i) m.W(i, j) = u(rng);
  for (Eigen::Index j = 0; j < frames; ++j)
    for (Eigen::Index i = 0; i < rank; ++i) m.H(i, j) = u(rng);
  const Scalar scale = std::sqrt(target_mean_power / (m.W * m.H).mean());
  m.W *= scale;
  m.H *= scale;
  m.W = m.W.cwiseMax(floor);
  m.H = m.H.cwiseMax(floor);
  return m;
}

/// One Itakura-Saito multiplicative sweep, H first, then W against the
/// refreshed model:
///   H <- H .* (W^T (V ./ Vh^2)) ./ (W^T (1 ./ Vh))
///   W <- W .* ((V ./ Vh^2) H^T) ./ ((1 ./ Vh) H^T)
template <typename Scalar, typename Derived>
void mu_update(NmfModel<Scalar>& m, const Eigen::MatrixBase<Derived>& V) {
  if (V.rows() != m.bins() || V.cols() != m.frames())
    throw std::invalid_argument("mu_update: power matrix is " + std::to_string(V.rows()) + "x" +
                                std::to_string(V.cols()) + ", model is " + std::to_string(m.bins()) +
                                "x" + std::to_string(m.frames()));
  if (!V.allFinite()) throw std::invalid_argument("mu_update: non-finite power matrix");
  if ((V.array() < 0).any()) throw std::invalid_argument("mu_update: negative power entry");

  RealMatrix<Scalar> vh = m.W * m.H;
  RealMatrix<Scalar> num = V.derived().array() / vh.array().square();
  RealMatrix<Scalar> den = vh.array().inverse();
  m.H.array() *= (m.W.transpose() * num).array() / (m.W.transpose() * den).array();
  m.H = m.H.cwiseMax(m.floor);

  vh = m.W * m.H;
  num = V.derived().array() / vh.array().square();
  den = vh.array().inverse();
  m.W.array() *= (num * m.H.transpose()).array() / (den * m.H.transpose()).array();
  m.W = m.W.cwiseMax(m.floor);

  if (!m.W.allFinite() || !m.H.allFinite()) throw std::runtime_error("mu_update: non-finite factors");
}

template <typename Scalar, typename Derived>
NmfModel<Scalar> mu_update_step(NmfModel<Scalar> m, const Eigen::MatrixBase<Derived>& V) {
  mu_update(m, V);
  return m;
}

/// log p(x | s) = -sum[ln(pi (W H)) + |x - s|^2 / (W H)].
template <typename Scalar, typename DerivedX, typename DerivedS>
Scalar noise_log_likelihood(const NmfModel<Scalar>& m, const Eigen::MatrixBase<DerivedX>& x,
                            const Eigen::MatrixBase<DerivedS>& s) {
  const RealMatrix<Scalar> vh = m.variance();
  const RealMatrix<Scalar> power = (x - s).cwiseAbs2();
  return -((std::numbers::pi_v<Scalar> * vh.array()).log() + power.array() / vh.array()).sum();
}

}  // namespace udiffse

#endif  // UDIFFSE_NOISE_NMF_HPP
