#ifndef UDIFFSE_WAV_HPP
#define UDIFFSE_WAV_HPP

#include "udiffse/spectral.hpp"

#include <filesystem>

namespace udiffse {

enum class WavEncoding { Pcm16, Float32 };

/// Mono RIFF/WAVE reader. Accepts 16-bit PCM and 32-bit IEEE float at
/// `expected_rate`; anything else is rejected rather than converted.
Waveform read_wav(const std::filesystem::path& path, int expected_rate = 16000);

void write_wav(const std::filesystem::path& path, const Waveform& w,
               WavEncoding encoding = WavEncoding::Float32);

}  // namespace udiffse

#endif  // UDIFFSE_WAV_HPP
