#ifndef UDIFFSE_SAMPLER_HPP
#define UDIFFSE_SAMPLER_HPP

#include "udiffse/noise_nmf.hpp"
#include "udiffse/score_models.hpp"
#include "udiffse/sde.hpp"
#include "udiffse/spectral.hpp"

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace udiffse {

enum class PosteriorCadence { EvenSteps, Never };

struct SamplerConfig {
  int n_steps = 30;
  double corrector_snr = 0.5;
  double likelihood_weight = 1.5;
  int em_iterations = 5;
  PosteriorCadence cadence = PosteriorCadence::EvenSteps;
  std::uint64_t seed = 0;
  // UDiffSE M-step: multiplicative sweeps per EM round.
  int mstep_iterations = 50;
  // Freeze the noise model (no parameter updates at all) when false.
  bool update_noise = true;
  // Record ||x - s/delta|| after every reverse step.
  bool record_trace = false;

  void validate() const;
};

struct RunStats {
  std::size_t score_evaluations = 0;
  std::size_t nmf_updates = 0;
  double wall_time = 0.0;
  double audio_duration = 0.0;
};

struct EnhanceResult {
  Spectrogram estimate;
  NmfModel<double> nmf;
  RunStats stats;
  std::vector<double> residual_trace;
};

class SamplerDiverged : public std::runtime_error {
 public:
  SamplerDiverged(int step, const std::string& what);
  int step() const { return step_; }

 private:
  int step_;
};

/// Langevin corrector with step eps = (sigma_tau * r)^2:
///   s + eps * S(s, [v], tau) + sqrt(2 eps) * zeta.
CMatrix corrector_step(const CMatrix& s, double tau, const DiffusionSchedule<double>& sched,
                       const ScoreModel& model, const VisualEmbedding* v, double snr,
                       const CMatrix& zeta, RunStats& stats);
CMatrix corrector_step(const CMatrix& s, double tau, const DiffusionSchedule<double>& sched,
                       const ScoreModel& model, const VisualEmbedding* v, double snr, Rng& rng,
                       RunStats& stats);

/// Reverse-SDE Euler-Maruyama step of size dtau with drift f = -gamma s:
///   s * (1 + gamma dtau) + g^2 S(s, [v], tau) dtau + g sqrt(dtau) * zeta.
CMatrix predictor_step(const CMatrix& s, double tau, double dtau, const DiffusionSchedule<double>& sched,
                       const ScoreModel& model, const VisualEmbedding* v, const CMatrix& zeta,
                       RunStats& stats);
CMatrix predictor_step(const CMatrix& s, double tau, double dtau, const DiffusionSchedule<double>& sched,
                       const ScoreModel& model, const VisualEmbedding* v, Rng& rng, RunStats& stats);

/// Gradient of the noise-perturbed pseudo-likelihood
///   log N_C(x; s/delta, sigma^2/delta^2 + noise_var)
/// with respect to s, elementwise over the F x T bins.
CMatrix posterior_gradient(const CMatrix& s, const CMatrix& x, double tau,
                           const DiffusionSchedule<double>& sched, const RMatrix& noise_var);

/// Plain predictor-corrector prior sampling started from N_C(init_mean, I).
CMatrix sample_prior_pc(const CMatrix& init_mean, const ScoreModel& model, const VisualEmbedding* v,
                        const DiffusionSchedule<double>& sched, const SamplerConfig& cfg,
                        RunStats* stats = nullptr);

/// Single reverse pass; on even steps a likelihood-guided step, a Tweedie
/// estimate of s_0 and one multiplicative noise update.
EnhanceResult run_udiffse_plus(const Spectrogram& x, const ScoreModel& model, const VisualEmbedding* v,
                               const NmfModel<double>& nmf_init, const DiffusionSchedule<double>& sched,
                               const SamplerConfig& cfg);

/// EM baseline: em_iterations full guided reverse passes, each followed by
/// mstep_iterations multiplicative updates on |x - s_hat|^2.
EnhanceResult run_udiffse(const Spectrogram& x, const ScoreModel& model, const VisualEmbedding* v,
                          const NmfModel<double>& nmf_init, const DiffusionSchedule<double>& sched,
                          const SamplerConfig& cfg);

/// Score-evaluation count per run: 2N + floor(N/2) for UDiffSE+, em * 2N for UDiffSE.
std::size_t expected_score_evaluations_plus(int n_steps);
std::size_t expected_score_evaluations_em(int n_steps, int em_iterations);

}  // namespace udiffse

#endif  // UDIFFSE_SAMPLER_HPP
