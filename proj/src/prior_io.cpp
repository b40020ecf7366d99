#include "udiffse/score_models.hpp"

#include "udiffse/detail/binary_io.hpp"

#include <string>

namespace udiffse {

namespace {

constexpr std::string_view kPriorMagic = "UDPRIOR1";

}  // namespace

void save_prior(const std::filesystem::path& path, const GaussianPrior& prior) {
  prior.validate();
  detail::ByteWriter out;
  out.bytes(kPriorMagic);
  out.u64(static_cast<std::uint64_t>(prior.bins()));
  out.u64(static_cast<std::uint64_t>(prior.frames()));
  out.u8(prior.conditional() ? 1 : 0);
  if (prior.conditional()) out.u64(static_cast<std::uint64_t>(prior.visual_dim()));
  for (const Complex& z : prior.mean.reshaped()) out.f64(z.real());
  for (const Complex& z : prior.mean.reshaped()) out.f64(z.imag());
  for (double c : prior.variance.reshaped()) out.f64(c);
  if (prior.conditional()) {
    for (const Complex& z : prior.conditioning->reshaped()) out.f64(z.real());
    for (const Complex& z : prior.conditioning->reshaped()) out.f64(z.imag());
  }
  detail::write_file(path.string(), out.data());
}

GaussianPrior load_prior(const std::filesystem::path& path) {
  const std::string name = path.string();
  const std::vector<char> buf = detail::read_file(name);
  detail::ByteReader r(buf, name);
  if (buf.size() < kPriorMagic.size() || r.bytes(kPriorMagic.size()) != kPriorMagic)
    throw std::runtime_error(name + ": bad magic, not a UDPRIOR1 prior file");
  const auto bins = static_cast<Eigen::Index>(r.u64());
  const auto frames = static_cast<Eigen::Index>(r.u64());
  const std::uint8_t flag = r.u8();
  if (flag > 1) throw std::runtime_error(name + ": invalid conditional flag");
  const Eigen::Index dim = flag ? static_cast<Eigen::Index>(r.u64()) : 0;
  const std::size_t n = static_cast<std::size_t>(bins * frames);
  const std::size_t values = 3 * n + 2 * n * static_cast<std::size_t>(dim);
  r.need(8 * values);

  GaussianPrior p;
  p.mean.resize(bins, frames);
  p.variance.resize(bins, frames);
  for (Complex& z : p.mean.reshaped()) z.real(r.f64());
  for (Complex& z : p.mean.reshaped()) z.imag(r.f64());
  for (double& c : p.variance.reshaped()) c = r.f64();
  if (flag) {
    CMatrix a(bins * frames, dim);
    for (Complex& z : a.reshaped()) z.real(r.f64());
    for (Complex& z : a.reshaped()) z.imag(r.f64());
    p.conditioning = std::move(a);
  }
  p.validate();
  return p;
}

}  // namespace udiffse
