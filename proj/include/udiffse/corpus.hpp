#ifndef UDIFFSE_CORPUS_HPP
#define UDIFFSE_CORPUS_HPP

#include "udiffse/av_fusion.hpp"
#include "udiffse/score_models.hpp"
#include "udiffse/spectral.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace udiffse {

enum class SourceKind { Harmonic, AmModulated, GaussianPriorDraw };
enum class NoiseKind { White, Lowpass, BabbleSurrogate };

SourceKind parse_source_kind(std::string_view name);
NoiseKind parse_noise_kind(std::string_view name);
std::string_view to_string(SourceKind kind);
std::string_view to_string(NoiseKind kind);

struct SceneSpec {
  double duration = 2.04;
  double snr_db = 0.0;
  SourceKind source = SourceKind::Harmonic;
  NoiseKind noise = NoiseKind::White;
  std::uint64_t seed = 0;
  int sample_rate = 16000;
  int visual_dim = VisualEmbedding::kDefaultDim;
  double frame_rate = 25.0;
};

struct Scene {
  Waveform clean;
  Waveform noise;  // the scaled noise actually added
  Waveform noisy;
  VisualEmbedding visual;
};

/// Clean, noise and visual draws use separate sub-streams of spec.seed.
/// GaussianPriorDraw sources need `prior` with the scene's STFT shape and
/// produce istft of an exact prior sample.
Scene gen_synthetic_scene(const SceneSpec& spec, const GaussianPrior* prior = nullptr,
                          const StftConfig& stft_cfg = {});

Waveform gen_source(const SceneSpec& spec, const GaussianPrior* prior = nullptr,
                    const StftConfig& stft_cfg = {});
Waveform gen_noise(const SceneSpec& spec);

/// v[t] = e(t) * u + eta with e(t) the clean energy of video frame t
/// (normalised to peak 1), u a seeded random direction and eta small noise.
VisualEmbedding gen_visual_embedding(const Waveform& clean, const SceneSpec& spec);

struct ReferencePriorOptions {
  double rms = 1.0;                // RMS of |mean| over bins
  double relative_variance = 0.05;  // c = relative_variance * |mean|^2 + variance_floor
  double variance_floor = 0.01;
};

/// Gaussian prior centred on the spectrogram of a seeded harmonic source.
GaussianPrior make_reference_prior(double duration, std::uint64_t seed, const ReferencePriorOptions& opts = {},
                                   const StftConfig& stft_cfg = {}, int sample_rate = 16000);

struct ManifestEntry {
  std::string clean;
  std::string noisy;
  std::string visual;
  std::uint64_t seed = 0;
  double snr_db = 0.0;
};

/// One whitespace-separated line per scene: clean noisy visual seed snr_db.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace udiffse

#endif  // UDIFFSE_CORPUS_HPP
