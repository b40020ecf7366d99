#include "udiffse/spectral.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace udiffse {

void StftConfig::validate() const {
  if (window_length < 2) throw std::invalid_argument("stft: window_length must be >= 2");
  if (hop < 1) throw std::invalid_argument("stft: hop must be >= 1");
  if (hop > window_length) throw std::invalid_argument("stft: hop exceeds window length");
}

double Spectrogram::duration() const {
  const double n = length > 0 ? static_cast<double>(length)
                              : static_cast<double>((frames() - 1) * config.hop);
  return n / sample_rate;
}

RVector hann_window(int length) {
  RVector w(length);
  for (int n = 0; n < length; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
  return w;
}

namespace {

// Reflect index into [0, n) without repeating the edge sample.
Eigen::Index reflect(Eigen::Index i, Eigen::Index n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

}  // namespace

Spectrogram stft(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  const Eigen::Index len = w.size();
  if (len == 0) throw std::invalid_argument("stft: empty waveform");
  const int pad = cfg.pad();
  if (len <= pad)
    throw std::invalid_argument("stft: reflection padding needs more than " + std::to_string(pad) +
                                " samples, got " + std::to_string(len));
  if (!w.samples.allFinite()) throw std::invalid_argument("stft: non-finite samples");

  const int n = cfg.window_length;
  const Eigen::Index frames = 1 + len / cfg.hop;
  const RVector window = hann_window(n);

  Spectrogram S;
  S.config = cfg;
  S.sample_rate = w.sample_rate;
  S.length = static_cast<std::size_t>(len);
  S.data.resize(cfg.bins(), frames);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(n);
  std::vector<Complex> spectrum;
  for (Eigen::Index k = 0; k < frames; ++k) {
    const Eigen::Index start = k * cfg.hop - pad;
    for (int j = 0; j < n; ++j) frame[j] = window[j] * w.samples[reflect(start + j, len)];
    fft.fwd(spectrum, frame);
    for (int f = 0; f < cfg.bins(); ++f) S.data(f, k) = spectrum[f];
  }
  return S;
}

Waveform istft(const Spectrogram& S, std::optional<std::size_t> length) {
  const StftConfig& cfg = S.config;
  cfg.validate();
  if (S.data.rows() != cfg.bins())
    throw std::invalid_argument("istft: spectrogram has " + std::to_string(S.data.rows()) +
                                " bins, config expects " + std::to_string(cfg.bins()));
  if (S.data.cols() < 1) throw std::invalid_argument("istft: no frames");
  if (!S.data.allFinite()) throw std::invalid_argument("istft: non-finite spectrogram");

  const int n = cfg.window_length;
  const int pad = cfg.pad();
  const Eigen::Index frames = S.data.cols();
  const Eigen::Index out_len = static_cast<Eigen::Index>(
      length ? *length : (S.length > 0 ? S.length : static_cast<std::size_t>((frames - 1) * cfg.hop)));

  const RVector window = hann_window(n);
  const Eigen::Index padded_len = (frames - 1) * cfg.hop + n;
  RVector acc = RVector::Zero(padded_len);
  RVector norm = RVector::Zero(padded_len);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<Complex> spectrum(cfg.bins());
  std::vector<double> frame;
  for (Eigen::Index k = 0; k < frames; ++k) {
    for (int f = 0; f < cfg.bins(); ++f) spectrum[f] = S.data(f, k);
    fft.inv(frame, spectrum, n);
    const Eigen::Index start = k * cfg.hop;
    for (int j = 0; j < n; ++j) {
      acc[start + j] += window[j] * frame[j];
      norm[start + j] += window[j] * window[j];
    }
  }

  Waveform out;
  out.sample_rate = S.sample_rate;
  out.samples = RVector::Zero(out_len);
  for (Eigen::Index i = 0; i < out_len; ++i) {
    const Eigen::Index p = i + pad;
    if (p < padded_len && norm[p] > 1e-11) out.samples[i] = acc[p] / norm[p];
  }
  return out;
}

double snr_noise_gain(const Waveform& clean, const Waveform& noise, double snr_db) {
  if (clean.size() == 0) throw std::invalid_argument("mix_at_snr: empty clean signal");
  if (noise.size() == 0) throw std::invalid_argument("mix_at_snr: empty noise signal");
  const Eigen::Index len = clean.size();
  double noise_energy = 0.0;
  for (Eigen::Index i = 0; i < len; ++i) {
    const double v = noise.samples[i % noise.size()];
    noise_energy += v * v;
  }
  const double clean_power = clean.samples.squaredNorm() / len;
  const double noise_power = noise_energy / len;
  if (clean_power <= 0.0) throw std::invalid_argument("mix_at_snr: silent clean signal, SNR undefined");
  if (noise_power <= 0.0) throw std::invalid_argument("mix_at_snr: silent noise signal");
  return std::sqrt(clean_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
}

Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db) {
  const double gain = snr_noise_gain(clean, noise, snr_db);
  Waveform mix = clean;
  for (Eigen::Index i = 0; i < mix.size(); ++i) mix.samples[i] += gain * noise.samples[i % noise.size()];
  return mix;
}

CMatrix complex_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  CMatrix z(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double re = normal(rng);
      const double im = normal(rng);
      z(i, j) = Complex(re, im);
    }
  return z;
}

CMatrix sample_complex_gaussian(const CMatrix& mean, const RMatrix& variance, Rng& rng) {
  if (variance.rows() != mean.rows() || variance.cols() != mean.cols())
    throw std::invalid_argument("sample_complex_gaussian: variance shape differs from mean");
  if ((variance.array() < 0.0).any() || !variance.allFinite())
    throw std::invalid_argument("sample_complex_gaussian: negative or non-finite variance");
  return mean + (complex_normal(mean.rows(), mean.cols(), rng).array() *
                 variance.array().sqrt().cast<Complex>())
                    .matrix();
}

}  // namespace udiffse
