#ifndef UDIFFSE_SPECTRAL_HPP
#define UDIFFSE_SPECTRAL_HPP

#include "udiffse/types.hpp"

#include <cstddef>
#include <optional>

namespace udiffse {

/// Mono waveform. Samples are dimensionless amplitudes.
struct Waveform {
  RVector samples;
  int sample_rate = 16000;

  Eigen::Index size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// STFT analysis parameters. The Hann taper is periodic and the FFT size
/// equals the window length, so the bin count is window_length/2 + 1.
struct StftConfig {
  int window_length = 510;
  int hop = 128;

  int bins() const { return window_length / 2 + 1; }
  int pad() const { return window_length / 2; }
  void validate() const;
};

RVector hann_window(int length);

/// Complex F x T time-frequency array. Flattening to a length-FT vector is
/// column-major (frequency index fastest), which is Eigen's native storage.
struct Spectrogram {
  CMatrix data;
  StftConfig config;
  int sample_rate = 16000;
  // Length of the analysed waveform; 0 means unknown, in which case
  // synthesis yields (T - 1) * hop samples.
  std::size_t length = 0;

  Eigen::Index bins() const { return data.rows(); }
  Eigen::Index frames() const { return data.cols(); }
  double duration() const;
};

/// Frames are centred: the signal is reflection-padded by window_length/2 on
/// both sides and frame k starts at k*hop in the padded signal. The trailing
/// partial frame is dropped, giving T = 1 + floor(L / hop).
Spectrogram stft(const Waveform& w, const StftConfig& cfg = {});

/// Weighted overlap-add inverse of stft(). Output length is `length` when
/// given, otherwise S.length, otherwise (T - 1) * hop.
Waveform istft(const Spectrogram& S, std::optional<std::size_t> length = std::nullopt);

/// clean + alpha * noise with alpha chosen so that the clean to scaled-noise
/// power ratio equals snr_db. Noise is tiled or truncated to the clean length.
Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db);

/// Power-matched scale applied to `noise` by mix_at_snr.
double snr_noise_gain(const Waveform& clean, const Waveform& noise, double snr_db);

/// rows x cols draw of N_C(0, 1): real and imaginary parts are independent
/// N(0, 1/2), so E|z|^2 = 1.
CMatrix complex_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// mean + sqrt(variance) * complex_normal(); variance is the total per-bin
/// variance E|z - mean|^2.
CMatrix sample_complex_gaussian(const CMatrix& mean, const RMatrix& variance, Rng& rng);

}  // namespace udiffse

#endif  // UDIFFSE_SPECTRAL_HPP
