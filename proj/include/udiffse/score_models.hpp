#ifndef UDIFFSE_SCORE_MODELS_HPP
#define UDIFFSE_SCORE_MODELS_HPP

#include "udiffse/av_fusion.hpp"
#include "udiffse/sde.hpp"
#include "udiffse/types.hpp"

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace udiffse {

/// Time-dependent score S(s_t, [v], t). Implementations are read-only after
/// construction and may be shared between concurrent runs.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  /// `v` must be non-null when conditional() is true and is ignored otherwise.
  virtual CMatrix evaluate(const CMatrix& s_t, double t, const VisualEmbedding* v) const = 0;
  virtual bool conditional() const = 0;
};

/// Diagonal complex Gaussian N_C(mu_eff, diag(c)) over F x T spectrograms.
/// When `conditioning` is set the mean becomes mu + reshape(A * pool(v)),
/// A being (F*T) x p and pool the frame average of the visual embedding.
struct GaussianPrior {
  CMatrix mean;
  RMatrix variance;
  std::optional<CMatrix> conditioning;

  Eigen::Index bins() const { return mean.rows(); }
  Eigen::Index frames() const { return mean.cols(); }
  bool conditional() const { return conditioning.has_value(); }
  Eigen::Index visual_dim() const { return conditioning ? conditioning->cols() : 0; }

  void validate() const;
  CMatrix effective_mean(const VisualEmbedding* v) const;
};

GaussianPrior make_gaussian_prior(const CMatrix& mean, const RMatrix& variance);

/// Score of the perturbed marginal N_C(delta_t mu_eff, (delta_t^2 c + sigma(t)^2) I):
/// -(s_t - delta_t mu_eff) / (delta_t^2 c + sigma(t)^2).
CMatrix gaussian_score(const GaussianPrior& prior, const CMatrix& s_t, double t,
                       const DiffusionSchedule<double>& sched, const VisualEmbedding* v = nullptr);

class GaussianScoreModel final : public ScoreModel {
 public:
  GaussianScoreModel(std::shared_ptr<const GaussianPrior> prior, DiffusionSchedule<double> sched);

  CMatrix evaluate(const CMatrix& s_t, double t, const VisualEmbedding* v) const override;
  bool conditional() const override { return prior_->conditional(); }

  const GaussianPrior& prior() const { return *prior_; }
  const DiffusionSchedule<double>& schedule() const { return sched_; }

 private:
  std::shared_ptr<const GaussianPrior> prior_;
  DiffusionSchedule<double> sched_;
};

// ---------------------------------------------------------------------------
// Denoising score matching

inline constexpr double kDefaultTrainTimeFloor = 0.03;

/// ||sigma(t) S(s_t, [v], t) + zeta||^2 for s_t = delta_t s + sigma(t) zeta.
double dsm_term(const ScoreModel& model, const CMatrix& clean, const VisualEmbedding* v, double t,
                const CMatrix& zeta, const DiffusionSchedule<double>& sched);

/// Monte-Carlo DSM objective: per item, t ~ U(t_min, 1) and zeta ~ N_C(0, I),
/// averaged over the batch. `visual` is empty or matches `batch` in length.
double dsm_loss(const ScoreModel& model, std::span<const CMatrix> batch,
                std::span<const VisualEmbedding> visual, const DiffusionSchedule<double>& sched, Rng& rng,
                double t_min = kDefaultTrainTimeFloor);

/// Gradient of dsm_term with respect to the Gaussian prior parameters. Complex
/// parameters use the packing d/dRe + i d/dIm.
struct DsmGradient {
  CMatrix mean;
  RMatrix variance;
  std::optional<CMatrix> conditioning;

  static DsmGradient zeros_like(const GaussianPrior& prior);
  DsmGradient& operator+=(const DsmGradient& other);
  DsmGradient& operator*=(double s);
};

/// Returns dsm_term for the Gaussian prior and accumulates its gradient.
double dsm_term_gradient(const GaussianPrior& prior, const CMatrix& clean, const VisualEmbedding* v,
                         double t, const CMatrix& zeta, const DiffusionSchedule<double>& sched,
                         DsmGradient& grad);

enum class Optimizer { Sgd, Momentum, Adam };

struct TrainConfig {
  std::size_t steps = 0;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  Optimizer optimizer = Optimizer::Sgd;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double t_min = kDefaultTrainTimeFloor;
};

struct TrainResult {
  GaussianPrior prior;
  std::vector<double> loss_history;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, double loss);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Stochastic-gradient DSM on the Gaussian family. The variance is optimised
/// in log space so it stays positive.
TrainResult train_dsm(GaussianPrior prior, std::span<const CMatrix> data,
                      std::span<const VisualEmbedding> visual, const DiffusionSchedule<double>& sched,
                      const TrainConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Prior file: "UDPRIOR1", u64 F, u64 T, u8 conditional, [u64 p if conditional],
// then float64 Re(mu), Im(mu), c, and if conditional Re(A), Im(A). Matrices
// are written column-major; everything little-endian.

void save_prior(const std::filesystem::path& path, const GaussianPrior& prior);
GaussianPrior load_prior(const std::filesystem::path& path);

}  // namespace udiffse

#endif  // UDIFFSE_SCORE_MODELS_HPP
