#include "udiffse/sampler.hpp"

#include <chrono>
#include <cmath>

namespace udiffse {

void SamplerConfig::validate() const {
  if (n_steps < 2) throw std::invalid_argument("sampler: n_steps must be >= 2");
  if (!(corrector_snr > 0.0)) throw std::invalid_argument("sampler: corrector snr must be positive");
  if (!(likelihood_weight >= 0.0)) throw std::invalid_argument("sampler: likelihood weight must be >= 0");
  if (em_iterations < 1) throw std::invalid_argument("sampler: em_iterations must be >= 1");
  if (mstep_iterations < 0) throw std::invalid_argument("sampler: mstep_iterations must be >= 0");
}

SamplerDiverged::SamplerDiverged(int step, const std::string& what)
    : std::runtime_error("sampler diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

CMatrix corrector_step(const CMatrix& s, double tau, const DiffusionSchedule<double>& sched,
                       const ScoreModel& model, const VisualEmbedding* v, double snr,
                       const CMatrix& zeta, RunStats& stats) {
  const auto c = schedule_coefficients(sched, tau);
  const double eps = (std::sqrt(c.sigma_sq) * snr) * (std::sqrt(c.sigma_sq) * snr);
  const CMatrix score = model.evaluate(s, tau, v);
  ++stats.score_evaluations;
  return s + eps * score + std::sqrt(2.0 * eps) * zeta;
}

CMatrix corrector_step(const CMatrix& s, double tau, const DiffusionSchedule<double>& sched,
                       const ScoreModel& model, const VisualEmbedding* v, double snr, Rng& rng,
                       RunStats& stats) {
  const CMatrix zeta = complex_normal(s.rows(), s.cols(), rng);
  return corrector_step(s, tau, sched, model, v, snr, zeta, stats);
}

CMatrix predictor_step(const CMatrix& s, double tau, double dtau, const DiffusionSchedule<double>& sched,
                       const ScoreModel& model, const VisualEmbedding* v, const CMatrix& zeta,
                       RunStats& stats) {
  const auto c = schedule_coefficients(sched, tau);
  const CMatrix score = model.evaluate(s, tau, v);
  ++stats.score_evaluations;
  // s - f dtau with f = drift_scale * s
  return s - (c.drift_scale * dtau) * s + (c.g * c.g * dtau) * score + (c.g * std::sqrt(dtau)) * zeta;
}

CMatrix predictor_step(const CMatrix& s, double tau, double dtau, const DiffusionSchedule<double>& sched,
                       const ScoreModel& model, const VisualEmbedding* v, Rng& rng, RunStats& stats) {
  const CMatrix zeta = complex_normal(s.rows(), s.cols(), rng);
  return predictor_step(s, tau, dtau, sched, model, v, zeta, stats);
}

CMatrix posterior_gradient(const CMatrix& s, const CMatrix& x, double tau,
                           const DiffusionSchedule<double>& sched, const RMatrix& noise_var) {
  if (s.rows() != x.rows() || s.cols() != x.cols() || noise_var.rows() != x.rows() ||
      noise_var.cols() != x.cols())
    throw std::invalid_argument("posterior_gradient: shape mismatch");
  if (!(noise_var.array() > 0.0).all())
    throw std::invalid_argument("posterior_gradient: noise variance must be positive");
  const auto c = schedule_coefficients(sched, tau);
  const RMatrix total = c.sigma_sq / (c.delta * c.delta) + noise_var.array();
  return ((x - s / c.delta).array() / (c.delta * total.array()).cast<Complex>()).matrix();
}

std::size_t expected_score_evaluations_plus(int n_steps) {
  return 2 * static_cast<std::size_t>(n_steps) + static_cast<std::size_t>(n_steps / 2);
}

std::size_t expected_score_evaluations_em(int n_steps, int em_iterations) {
  return static_cast<std::size_t>(em_iterations) * 2 * static_cast<std::size_t>(n_steps);
}

namespace {

enum class Guidance { None, Likelihood, LikelihoodWithNoiseUpdate };

struct PassInputs {
  const CMatrix& x;
  const ScoreModel& model;
  const VisualEmbedding* v;
  const DiffusionSchedule<double>& sched;
  const SamplerConfig& cfg;
  double limit;
};

void check_state(const CMatrix& s, double limit, int step) {
  if (!s.allFinite()) throw SamplerDiverged(step, "non-finite state");
  const double peak = s.cwiseAbs().maxCoeff();
  if (peak > limit)
    throw SamplerDiverged(step, "state magnitude " + std::to_string(peak) + " exceeds limit " +
                                    std::to_string(limit));
}

double divergence_limit(const CMatrix& x) { return 1e6 * x.cwiseAbs().maxCoeff(); }

// One reverse diffusion pass from s_1 ~ N_C(x, I) to s_0.
CMatrix reverse_pass(const PassInputs& in, Guidance guidance, NmfModel<double>& nmf, Rng& rng,
                     RunStats& stats, std::vector<double>* trace) {
  const CMatrix& x = in.x;
  const SamplerConfig& cfg = in.cfg;
  const double dtau = 1.0 / cfg.n_steps;
  const bool guided = guidance != Guidance::None && cfg.cadence == PosteriorCadence::EvenSteps;

  CMatrix s = x + complex_normal(x.rows(), x.cols(), rng);
  for (int i = cfg.n_steps; i >= 1; --i) {
    const double tau = static_cast<double>(i) / cfg.n_steps;
    s = corrector_step(s, tau, in.sched, in.model, in.v, cfg.corrector_snr, rng, stats);
    s = predictor_step(s, tau, dtau, in.sched, in.model, in.v, rng, stats);

    if (guided && i % 2 == 0) {
      const auto c = schedule_coefficients(in.sched, tau);
      const CMatrix grad = posterior_gradient(s, x, tau, in.sched, nmf.variance());
      s += (cfg.likelihood_weight * c.g * c.g * dtau) * grad;
      if (guidance == Guidance::LikelihoodWithNoiseUpdate) {
        const CMatrix score = in.model.evaluate(s, tau, in.v);
        ++stats.score_evaluations;
        const CMatrix s0 = tweedie_estimate(s, tau, in.sched, score);
        if (cfg.update_noise) {
          const RMatrix power = (x - s0).cwiseAbs2();
          if (!power.allFinite()) throw SamplerDiverged(i, "non-finite speech estimate");
          try {
            mu_update(nmf, power);
          } catch (const std::exception& e) {
            throw SamplerDiverged(i, e.what());
          }
          ++stats.nmf_updates;
        }
      }
    }
    check_state(s, in.limit, i);
    if (trace) {
      const auto c = schedule_coefficients(in.sched, tau);
      trace->push_back((x - s / c.delta).norm());
    }
  }
  return s;
}

void check_inputs(const Spectrogram& x, const ScoreModel& model, const VisualEmbedding* v,
                  const NmfModel<double>& nmf, const DiffusionSchedule<double>& sched,
                  const SamplerConfig& cfg) {
  sched.validate();
  cfg.validate();
  if (!x.data.allFinite()) throw std::invalid_argument("sampler: non-finite mixture");
  if (x.data.size() == 0 || x.data.cwiseAbs().maxCoeff() == 0.0)
    throw std::invalid_argument("sampler: silent mixture");
  if (model.conditional() && v == nullptr)
    throw std::invalid_argument("sampler: conditional score model needs a visual embedding");
  nmf.validate();
  if (nmf.bins() != x.bins() || nmf.frames() != x.frames())
    throw std::invalid_argument("sampler: noise model is " + std::to_string(nmf.bins()) + "x" +
                                std::to_string(nmf.frames()) + ", mixture is " +
                                std::to_string(x.bins()) + "x" + std::to_string(x.frames()));
}

Spectrogram like(const Spectrogram& x, CMatrix data) {
  Spectrogram out;
  out.data = std::move(data);
  out.config = x.config;
  out.sample_rate = x.sample_rate;
  out.length = x.length;
  return out;
}

}  // namespace

CMatrix sample_prior_pc(const CMatrix& init_mean, const ScoreModel& model, const VisualEmbedding* v,
                        const DiffusionSchedule<double>& sched, const SamplerConfig& cfg, RunStats* stats) {
  sched.validate();
  cfg.validate();
  Rng rng(cfg.seed);
  RunStats local;
  NmfModel<double> unused;
  // A zero init mean has no natural scale; fall back to the unit init noise.
  const double limit = std::max(divergence_limit(init_mean), 1e6);
  const CMatrix out = reverse_pass({init_mean, model, v, sched, cfg, limit}, Guidance::None, unused, rng,
                                   stats ? *stats : local, nullptr);
  return out;
}

EnhanceResult run_udiffse_plus(const Spectrogram& x, const ScoreModel& model, const VisualEmbedding* v,
                               const NmfModel<double>& nmf_init, const DiffusionSchedule<double>& sched,
                               const SamplerConfig& cfg) {
  check_inputs(x, model, v, nmf_init, sched, cfg);
  const auto start = std::chrono::steady_clock::now();
  EnhanceResult result;
  result.nmf = nmf_init;
  Rng rng(cfg.seed);
  const PassInputs in{x.data, model, v, sched, cfg, divergence_limit(x.data)};
  const CMatrix s = reverse_pass(in, Guidance::LikelihoodWithNoiseUpdate, result.nmf, rng, result.stats,
                                 cfg.record_trace ? &result.residual_trace : nullptr);
  result.estimate = like(x, s);
  result.stats.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.stats.audio_duration = x.duration();
  return result;
}

EnhanceResult run_udiffse(const Spectrogram& x, const ScoreModel& model, const VisualEmbedding* v,
                          const NmfModel<double>& nmf_init, const DiffusionSchedule<double>& sched,
                          const SamplerConfig& cfg) {
  check_inputs(x, model, v, nmf_init, sched, cfg);
  const auto start = std::chrono::steady_clock::now();
  EnhanceResult result;
  result.nmf = nmf_init;
  Rng rng(cfg.seed);
  const PassInputs in{x.data, model, v, sched, cfg, divergence_limit(x.data)};
  CMatrix s;
  for (int round = 0; round < cfg.em_iterations; ++round) {
    s = reverse_pass(in, Guidance::Likelihood, result.nmf, rng, result.stats,
                     cfg.record_trace ? &result.residual_trace : nullptr);
    if (!cfg.update_noise) continue;
    const RMatrix power = (x.data - s).cwiseAbs2();
    for (int k = 0; k < cfg.mstep_iterations; ++k) {
      try {
        mu_update(result.nmf, power);
      } catch (const std::exception& e) {
        throw SamplerDiverged(0, std::string("M-step: ") + e.what());
      }
      ++result.stats.nmf_updates;
    }
  }
  result.estimate = like(x, s);
  result.stats.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.stats.audio_duration = x.duration();
  return result;
}

}  // namespace udiffse
