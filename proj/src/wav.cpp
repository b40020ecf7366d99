#include "udiffse/wav.hpp"

#include "udiffse/detail/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace udiffse {

namespace detail {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace detail

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

}  // namespace

Waveform read_wav(const std::filesystem::path& path, int expected_rate) {
  const std::string name = path.string();
  const std::vector<char> buf = detail::read_file(name);
  detail::ByteReader r(buf, name);
  if (r.bytes(4) != "RIFF") throw std::runtime_error(name + ": not a RIFF file");
  r.u32();
  if (r.bytes(4) != "WAVE") throw std::runtime_error(name + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const std::string id = r.bytes(4);
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      r.need(16);
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();
      r.u16();
      bits = r.u16();
      if (format == kFormatExtensible && size >= 26) {
        r.skip(8);
        format = r.u16();  // first two bytes of the subformat GUID
        r.skip(size - 26);
      } else {
        r.skip(size - 16);
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw std::runtime_error(name + ": data chunk before fmt chunk");
      if (channels != 1) throw std::runtime_error(name + ": only mono audio is supported");
      if (static_cast<int>(rate) != expected_rate)
        throw std::runtime_error(name + ": sample rate " + std::to_string(rate) + " Hz, expected " +
                                 std::to_string(expected_rate));
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      if (format == kFormatPcm && bits == 16) {
        r.need(size);
        const std::size_t n = size / 2;
        w.samples.resize(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
          w.samples[static_cast<Eigen::Index>(i)] = static_cast<std::int16_t>(r.u16()) / 32768.0;
      } else if (format == kFormatFloat && bits == 32) {
        r.need(size);
        const std::size_t n = size / 4;
        w.samples.resize(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) w.samples[static_cast<Eigen::Index>(i)] = r.f32();
        if (!w.samples.allFinite()) throw std::runtime_error(name + ": non-finite samples");
      } else {
        throw std::runtime_error(name + ": unsupported encoding (format " + std::to_string(format) +
                                 ", " + std::to_string(bits) + " bits)");
      }
      return w;
    } else {
      r.skip(size + (size & 1));
    }
  }
  throw std::runtime_error(name + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding encoding) {
  if (w.sample_rate <= 0) throw std::invalid_argument("write_wav: sample rate must be positive");
  if (!w.samples.allFinite()) throw std::invalid_argument("write_wav: non-finite samples");
  const bool pcm = encoding == WavEncoding::Pcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t data_size = static_cast<std::uint32_t>(w.size()) * (bits / 8);

  detail::ByteWriter out;
  out.bytes("RIFF");
  out.u32(36 + data_size);
  out.bytes("WAVE");
  out.bytes("fmt ");
  out.u32(16);
  out.u16(pcm ? kFormatPcm : kFormatFloat);
  out.u16(1);
  out.u32(static_cast<std::uint32_t>(w.sample_rate));
  out.u32(static_cast<std::uint32_t>(w.sample_rate) * (bits / 8));
  out.u16(bits / 8);
  out.u16(bits);
  out.bytes("data");
  out.u32(data_size);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (pcm) {
      const double v = std::clamp(w.samples[i], -1.0, 32767.0 / 32768.0);
      out.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(v * 32768.0))));
    } else {
      out.f32(static_cast<float>(w.samples[i]));
    }
  }
  detail::write_file(path.string(), out.data());
}

}  // namespace udiffse
