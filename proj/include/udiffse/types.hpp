#ifndef UDIFFSE_TYPES_HPP
#define UDIFFSE_TYPES_HPP

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <random>

namespace udiffse {

template <typename Scalar>
using ComplexMatrix = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RealMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RealVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Complex = std::complex<double>;
using CMatrix = ComplexMatrix<double>;
using RMatrix = RealMatrix<double>;
using RVector = RealVector<double>;

// Every stochastic draw in the engine goes through an explicit generator of
// this type. Handles are never shared across threads.
using Rng = std::mt19937_64;

// Derives an independent generator for a named sub-stream of a seed, so that
// e.g. clean and noise components of a scene do not share draws.
inline Rng substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

}  // namespace udiffse

#endif  // UDIFFSE_TYPES_HPP
