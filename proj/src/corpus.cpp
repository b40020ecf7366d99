#include "udiffse/corpus.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace udiffse {

namespace {

constexpr std::uint64_t kCleanStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kVisualStream = 3;
constexpr std::uint64_t kVisualDirectionSeed = 0x6c6970;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Eigen::Index sample_count(const SceneSpec& spec) {
  if (!(spec.duration > 0.0)) throw std::invalid_argument("scene: duration must be positive");
  if (spec.sample_rate <= 0) throw std::invalid_argument("scene: sample rate must be positive");
  return static_cast<Eigen::Index>(std::llround(spec.duration * spec.sample_rate));
}

// Slow syllable-like envelope in [floor, 1].
RVector syllable_envelope(Eigen::Index n, int rate, Rng& rng) {
  std::uniform_real_distribution<double> syl(3.0, 5.0);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  const double f = syl(rng);
  const double p = phase(rng);
  RVector env(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    env[i] = 0.15 + 0.85 * std::pow(0.5 - 0.5 * std::cos(kTwoPi * f * t + p), 2.0);
  }
  return env;
}

RVector harmonic_voice(Eigen::Index n, int rate, Rng& rng) {
  std::uniform_real_distribution<double> pitch(100.0, 220.0);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  std::uniform_real_distribution<double> vib_rate(4.0, 6.0);
  const double f0 = pitch(rng);
  const double vr = vib_rate(rng);
  const double vp = phase(rng);
  std::array<double, 5> phases{};
  for (double& ph : phases) ph = phase(rng);
  const RVector env = syllable_envelope(n, rate, rng);

  RVector out(n);
  double inst_phase = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double f = f0 * (1.0 + 0.03 * std::sin(kTwoPi * vr * t + vp));
    inst_phase += kTwoPi * f / rate;
    double v = 0.0;
    for (int k = 1; k <= 5; ++k) v += std::sin(k * inst_phase + phases[k - 1]) / k;
    out[i] = env[i] * v;
  }
  return out;
}

RVector white(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  RVector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = normal(rng);
  return out;
}

RVector one_pole_lowpass(const RVector& x, double a) {
  RVector y(x.size());
  double state = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    state = a * state + (1.0 - a) * x[i];
    y[i] = state;
  }
  return y;
}

void normalise_rms(RVector& x, double rms) {
  const double cur = std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
  if (cur > 0.0) x *= rms / cur;
}

}  // namespace

SourceKind parse_source_kind(std::string_view name) {
  if (name == "harmonic") return SourceKind::Harmonic;
  if (name == "am-modulated") return SourceKind::AmModulated;
  if (name == "gaussian-prior-draw") return SourceKind::GaussianPriorDraw;
  throw std::invalid_argument("unknown source kind '" + std::string(name) + "'");
}

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "white") return NoiseKind::White;
  if (name == "lowpass") return NoiseKind::Lowpass;
  if (name == "babble-surrogate") return NoiseKind::BabbleSurrogate;
  throw std::invalid_argument("unknown noise kind '" + std::string(name) + "'");
}

std::string_view to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::Harmonic: return "harmonic";
    case SourceKind::AmModulated: return "am-modulated";
    case SourceKind::GaussianPriorDraw: return "gaussian-prior-draw";
  }
  return "?";
}

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::White: return "white";
    case NoiseKind::Lowpass: return "lowpass";
    case NoiseKind::BabbleSurrogate: return "babble-surrogate";
  }
  return "?";
}

Waveform gen_source(const SceneSpec& spec, const GaussianPrior* prior, const StftConfig& stft_cfg) {
  const Eigen::Index n = sample_count(spec);
  Rng rng = substream(spec.seed, kCleanStream);
  Waveform w;
  w.sample_rate = spec.sample_rate;
  switch (spec.source) {
    case SourceKind::Harmonic:
      w.samples = harmonic_voice(n, spec.sample_rate, rng);
      normalise_rms(w.samples, 0.05);
      break;
    case SourceKind::AmModulated: {
      const RVector carrier = one_pole_lowpass(white(n, rng), 0.9);
      w.samples = (syllable_envelope(n, spec.sample_rate, rng).array() * carrier.array()).matrix();
      normalise_rms(w.samples, 0.05);
      break;
    }
    case SourceKind::GaussianPriorDraw: {
      if (prior == nullptr) throw std::invalid_argument("gaussian-prior-draw source needs a prior");
      const Eigen::Index frames = 1 + n / stft_cfg.hop;
      if (prior->bins() != stft_cfg.bins() || prior->frames() != frames)
        throw std::invalid_argument("prior shape " + std::to_string(prior->bins()) + "x" +
                                    std::to_string(prior->frames()) + " does not match scene STFT shape " +
                                    std::to_string(stft_cfg.bins()) + "x" + std::to_string(frames));
      CMatrix mean = prior->mean;
      if (prior->conditional()) {
        // Condition on the embedding of the mean's own waveform.
        Spectrogram ms{prior->mean, stft_cfg, spec.sample_rate, static_cast<std::size_t>(n)};
        const VisualEmbedding v = gen_visual_embedding(istft(ms), spec);
        mean = prior->effective_mean(&v);
      }
      Spectrogram draw{sample_complex_gaussian(mean, prior->variance, rng), stft_cfg, spec.sample_rate,
                       static_cast<std::size_t>(n)};
      w = istft(draw);
      break;
    }
  }
  return w;
}

Waveform gen_noise(const SceneSpec& spec) {
  const Eigen::Index n = sample_count(spec);
  Rng rng = substream(spec.seed, kNoiseStream);
  Waveform w;
  w.sample_rate = spec.sample_rate;
  switch (spec.noise) {
    case NoiseKind::White:
      w.samples = white(n, rng);
      break;
    case NoiseKind::Lowpass:
      w.samples = one_pole_lowpass(white(n, rng), 0.95);
      break;
    case NoiseKind::BabbleSurrogate:
      w.samples = RVector::Zero(n);
      for (int k = 0; k < 6; ++k) w.samples += harmonic_voice(n, spec.sample_rate, rng);
      w.samples += 0.05 * white(n, rng);
      break;
  }
  normalise_rms(w.samples, 0.05);
  return w;
}

VisualEmbedding gen_visual_embedding(const Waveform& clean, const SceneSpec& spec) {
  if (spec.visual_dim < 1) throw std::invalid_argument("scene: visual dim must be positive");
  const auto frames = static_cast<Eigen::Index>(std::llround(spec.frame_rate * spec.duration));
  std::normal_distribution<double> normal(0.0, 1.0);

  // The direction is shared by every scene; only eta depends on the seed.
  Rng direction_rng = substream(kVisualDirectionSeed, kVisualStream);
  RVector direction(spec.visual_dim);
  for (Eigen::Index k = 0; k < direction.size(); ++k) direction[k] = normal(direction_rng);

  Rng rng = substream(spec.seed, kVisualStream);

  RVector energy = RVector::Zero(frames);
  const double hop = spec.sample_rate / spec.frame_rate;
  for (Eigen::Index t = 0; t < frames; ++t) {
    const auto a = static_cast<Eigen::Index>(std::floor(t * hop));
    const auto b = std::min(clean.size(), static_cast<Eigen::Index>(std::floor((t + 1) * hop)));
    if (b > a) energy[t] = clean.samples.segment(a, b - a).squaredNorm() / static_cast<double>(b - a);
  }
  if (energy.maxCoeff() > 0.0) energy /= energy.maxCoeff();

  VisualEmbedding v;
  v.frame_rate = spec.frame_rate;
  v.data.resize(frames, spec.visual_dim);
  for (Eigen::Index t = 0; t < frames; ++t)
    for (Eigen::Index k = 0; k < spec.visual_dim; ++k)
      v.data(t, k) = energy[t] * direction[k] + 0.05 * normal(rng);
  return v;
}

Scene gen_synthetic_scene(const SceneSpec& spec, const GaussianPrior* prior, const StftConfig& stft_cfg) {
  Scene scene;
  scene.clean = gen_source(spec, prior, stft_cfg);
  const Waveform raw_noise = gen_noise(spec);
  const double gain = snr_noise_gain(scene.clean, raw_noise, spec.snr_db);
  scene.noise = raw_noise;
  scene.noise.samples *= gain;
  scene.noisy = scene.clean;
  scene.noisy.samples += scene.noise.samples;
  scene.visual = gen_visual_embedding(scene.clean, spec);
  return scene;
}

GaussianPrior make_reference_prior(double duration, std::uint64_t seed, const ReferencePriorOptions& opts,
                                   const StftConfig& stft_cfg, int sample_rate) {
  SceneSpec spec;
  spec.duration = duration;
  spec.seed = seed;
  spec.sample_rate = sample_rate;
  spec.source = SourceKind::Harmonic;
  const Spectrogram S = stft(gen_source(spec), stft_cfg);
  GaussianPrior p;
  const double current = std::sqrt(S.data.cwiseAbs2().mean());
  p.mean = S.data * (opts.rms / current);
  p.variance = (opts.relative_variance * p.mean.cwiseAbs2().array() + opts.variance_floor).matrix();
  p.validate();
  return p;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const ManifestEntry& e : entries)
    out << e.clean << ' ' << e.noisy << ' ' << e.visual << ' ' << e.seed << ' ' << e.snr_db << '\n';
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ManifestEntry e;
    if (!(ss >> e.clean >> e.noisy >> e.visual >> e.seed >> e.snr_db))
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed manifest line");
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace udiffse
