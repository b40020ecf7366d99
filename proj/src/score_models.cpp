#include "udiffse/score_models.hpp"

#include "udiffse/spectral.hpp"

#include <cmath>
#include <string>

namespace udiffse {

void GaussianPrior::validate() const {
  if (mean.rows() < 1 || mean.cols() < 1) throw std::invalid_argument("gaussian prior: empty mean");
  if (variance.rows() != mean.rows() || variance.cols() != mean.cols())
    throw std::invalid_argument("gaussian prior: variance shape differs from mean");
  if (!(variance.array() > 0.0).all() || !variance.allFinite())
    throw std::invalid_argument("gaussian prior: variance must be positive and finite");
  if (!mean.allFinite()) throw std::invalid_argument("gaussian prior: non-finite mean");
  if (conditioning && conditioning->rows() != mean.size())
    throw std::invalid_argument("gaussian prior: conditioning map must have F*T rows");
}

CMatrix GaussianPrior::effective_mean(const VisualEmbedding* v) const {
  if (!conditioning) return mean;
  if (v == nullptr) throw std::invalid_argument("conditional prior evaluated without a visual embedding");
  if (v->dim() != conditioning->cols())
    throw std::invalid_argument("visual embedding dim " + std::to_string(v->dim()) +
                                " does not match prior conditioning dim " +
                                std::to_string(conditioning->cols()));
  const CMatrix shift = *conditioning * v->pooled().cast<Complex>();
  return mean + shift.reshaped(mean.rows(), mean.cols());
}

GaussianPrior make_gaussian_prior(const CMatrix& mean, const RMatrix& variance) {
  GaussianPrior p{mean, variance, std::nullopt};
  p.validate();
  return p;
}

CMatrix gaussian_score(const GaussianPrior& prior, const CMatrix& s_t, double t,
                       const DiffusionSchedule<double>& sched, const VisualEmbedding* v) {
  if (s_t.rows() != prior.bins() || s_t.cols() != prior.frames())
    throw std::invalid_argument("gaussian_score: state is " + std::to_string(s_t.rows()) + "x" +
                                std::to_string(s_t.cols()) + ", prior is " +
                                std::to_string(prior.bins()) + "x" + std::to_string(prior.frames()));
  const auto c = schedule_coefficients(sched, t);
  const CMatrix m = prior.effective_mean(v);
  const RMatrix total = c.delta * c.delta * prior.variance.array() + c.sigma_sq;
  return (-(s_t - c.delta * m).array() / total.array().cast<Complex>()).matrix();
}

GaussianScoreModel::GaussianScoreModel(std::shared_ptr<const GaussianPrior> prior,
                                       DiffusionSchedule<double> sched)
    : prior_(std::move(prior)), sched_(sched) {
  if (!prior_) throw std::invalid_argument("GaussianScoreModel: null prior");
  prior_->validate();
  sched_.validate();
}

CMatrix GaussianScoreModel::evaluate(const CMatrix& s_t, double t, const VisualEmbedding* v) const {
  return gaussian_score(*prior_, s_t, t, sched_, v);
}

// ---------------------------------------------------------------------------

double dsm_term(const ScoreModel& model, const CMatrix& clean, const VisualEmbedding* v, double t,
                const CMatrix& zeta, const DiffusionSchedule<double>& sched) {
  const auto c = schedule_coefficients(sched, t);
  const double sigma = std::sqrt(c.sigma_sq);
  const CMatrix s_t = c.delta * clean + sigma * zeta;
  return (sigma * model.evaluate(s_t, t, v) + zeta).squaredNorm();
}

double dsm_loss(const ScoreModel& model, std::span<const CMatrix> batch,
                std::span<const VisualEmbedding> visual, const DiffusionSchedule<double>& sched, Rng& rng,
                double t_min) {
  if (batch.empty()) throw std::invalid_argument("dsm_loss: empty batch");
  if (!visual.empty() && visual.size() != batch.size())
    throw std::invalid_argument("dsm_loss: visual batch size differs from audio batch size");
  std::uniform_real_distribution<double> time(t_min, 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double t = time(rng);
    const CMatrix zeta = complex_normal(batch[i].rows(), batch[i].cols(), rng);
    total += dsm_term(model, batch[i], visual.empty() ? nullptr : &visual[i], t, zeta, sched);
  }
  return total / static_cast<double>(batch.size());
}

DsmGradient DsmGradient::zeros_like(const GaussianPrior& prior) {
  DsmGradient g;
  g.mean = CMatrix::Zero(prior.bins(), prior.frames());
  g.variance = RMatrix::Zero(prior.bins(), prior.frames());
  if (prior.conditioning) g.conditioning = CMatrix::Zero(prior.conditioning->rows(), prior.conditioning->cols());
  return g;
}

DsmGradient& DsmGradient::operator+=(const DsmGradient& other) {
  mean += other.mean;
  variance += other.variance;
  if (conditioning && other.conditioning) *conditioning += *other.conditioning;
  return *this;
}

DsmGradient& DsmGradient::operator*=(double s) {
  mean *= s;
  variance *= s;
  if (conditioning) *conditioning *= s;
  return *this;
}

double dsm_term_gradient(const GaussianPrior& prior, const CMatrix& clean, const VisualEmbedding* v,
                         double t, const CMatrix& zeta, const DiffusionSchedule<double>& sched,
                         DsmGradient& grad) {
  const auto c = schedule_coefficients(sched, t);
  const double sigma = std::sqrt(c.sigma_sq);
  const CMatrix m = prior.effective_mean(v);
  const CMatrix s_t = c.delta * clean + sigma * zeta;
  const auto total = (c.delta * c.delta * prior.variance.array() + c.sigma_sq);
  const CMatrix centred = s_t - c.delta * m;
  // r = sigma * S + zeta with S = -centred / total.
  const CMatrix residual = (zeta.array() - sigma * centred.array() / total.cast<Complex>()).matrix();

  const CMatrix g_mean = (2.0 * sigma * c.delta * residual.array() / total.cast<Complex>()).matrix();
  grad.mean += g_mean;
  grad.variance += (2.0 * sigma * c.delta * c.delta *
                    (residual.array().conjugate() * centred.array()).real() / total.square())
                       .matrix();
  if (prior.conditioning) {
    const RVector pooled = v->pooled();
    *grad.conditioning += g_mean.reshaped() * pooled.transpose().cast<Complex>();
  }
  return residual.squaredNorm();
}

TrainingDiverged::TrainingDiverged(std::size_t step, double loss)
    : std::runtime_error("DSM training diverged at step " + std::to_string(step) + " (loss " +
                         std::to_string(loss) + ")"),
      step_(step) {}

namespace {

// Flat real parameter vector: Re(mu), Im(mu), log c, Re(A), Im(A).
RVector pack(const GaussianPrior& p) {
  const Eigen::Index n = p.mean.size();
  const Eigen::Index na = p.conditioning ? p.conditioning->size() : 0;
  RVector x(3 * n + 2 * na);
  x.segment(0, n) = p.mean.real().reshaped();
  x.segment(n, n) = p.mean.imag().reshaped();
  x.segment(2 * n, n) = p.variance.array().log().matrix().reshaped();
  if (na > 0) {
    x.segment(3 * n, na) = p.conditioning->real().reshaped();
    x.segment(3 * n + na, na) = p.conditioning->imag().reshaped();
  }
  return x;
}

void unpack(const RVector& x, GaussianPrior& p) {
  const Eigen::Index n = p.mean.size();
  const Eigen::Index na = p.conditioning ? p.conditioning->size() : 0;
  p.mean.real() = x.segment(0, n).reshaped(p.mean.rows(), p.mean.cols());
  p.mean.imag() = x.segment(n, n).reshaped(p.mean.rows(), p.mean.cols());
  p.variance = x.segment(2 * n, n).array().exp().matrix().reshaped(p.mean.rows(), p.mean.cols());
  if (na > 0) {
    const Eigen::Index r = p.conditioning->rows(), c = p.conditioning->cols();
    p.conditioning->real() = x.segment(3 * n, na).reshaped(r, c);
    p.conditioning->imag() = x.segment(3 * n + na, na).reshaped(r, c);
  }
}

RVector pack_gradient(const DsmGradient& g, const GaussianPrior& p) {
  const Eigen::Index n = g.mean.size();
  const Eigen::Index na = g.conditioning ? g.conditioning->size() : 0;
  RVector x(3 * n + 2 * na);
  x.segment(0, n) = g.mean.real().reshaped();
  x.segment(n, n) = g.mean.imag().reshaped();
  // chain rule for log c
  x.segment(2 * n, n) = (g.variance.array() * p.variance.array()).matrix().reshaped();
  if (na > 0) {
    x.segment(3 * n, na) = g.conditioning->real().reshaped();
    x.segment(3 * n + na, na) = g.conditioning->imag().reshaped();
  }
  return x;
}

}  // namespace

TrainResult train_dsm(GaussianPrior prior, std::span<const CMatrix> data,
                      std::span<const VisualEmbedding> visual, const DiffusionSchedule<double>& sched,
                      const TrainConfig& cfg, Rng& rng) {
  prior.validate();
  sched.validate();
  if (data.empty()) throw std::invalid_argument("train_dsm: empty dataset");
  if (prior.conditional() && visual.size() != data.size())
    throw std::invalid_argument("train_dsm: conditional prior needs one visual embedding per item");
  for (const CMatrix& item : data)
    if (item.rows() != prior.bins() || item.cols() != prior.frames())
      throw std::invalid_argument("train_dsm: dataset item shape differs from prior");
  if (cfg.batch_size == 0) throw std::invalid_argument("train_dsm: batch_size must be positive");
  if (!(cfg.t_min > 0.0 && cfg.t_min < 1.0)) throw std::invalid_argument("train_dsm: t_min must lie in (0, 1)");

  TrainResult result{prior, {}};
  if (cfg.steps == 0) return result;
  result.loss_history.reserve(cfg.steps);

  RVector params = pack(prior);
  RVector first = RVector::Zero(params.size());
  RVector second = RVector::Zero(params.size());
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_real_distribution<double> time(cfg.t_min, 1.0);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    DsmGradient grad = DsmGradient::zeros_like(prior);
    double loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = pick(rng);
      const double t = time(rng);
      const CMatrix zeta = complex_normal(prior.bins(), prior.frames(), rng);
      const VisualEmbedding* v = prior.conditional() ? &visual[idx] : nullptr;
      loss += dsm_term_gradient(prior, data[idx], v, t, zeta, sched, grad);
    }
    const double scale = 1.0 / static_cast<double>(cfg.batch_size);
    loss *= scale;
    grad *= scale;
    if (!std::isfinite(loss)) throw TrainingDiverged(step, loss);
    result.loss_history.push_back(loss);

    const RVector g = pack_gradient(grad, prior);
    switch (cfg.optimizer) {
      case Optimizer::Sgd:
        params -= cfg.learning_rate * g;
        break;
      case Optimizer::Momentum:
        first = cfg.momentum * first + g;
        params -= cfg.learning_rate * first;
        break;
      case Optimizer::Adam: {
        first = cfg.beta1 * first + (1.0 - cfg.beta1) * g;
        second = cfg.beta2 * second + (1.0 - cfg.beta2) * g.cwiseAbs2();
        const double k = static_cast<double>(step + 1);
        const double c1 = 1.0 - std::pow(cfg.beta1, k);
        const double c2 = 1.0 - std::pow(cfg.beta2, k);
        params.array() -= cfg.learning_rate * (first.array() / c1) /
                          ((second.array() / c2).sqrt() + cfg.adam_eps);
        break;
      }
    }
    if (!params.allFinite()) throw TrainingDiverged(step, loss);
    unpack(params, prior);
  }
  result.prior = std::move(prior);
  return result;
}

}  // namespace udiffse
