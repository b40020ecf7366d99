#include "udiffse/av_fusion.hpp"

#include "udiffse/detail/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace udiffse {

namespace {

constexpr std::string_view kEmbeddingMagic = "AVEMB1";

void check_audio(const FusionBlock& block, const FeatureMap& audio, const VisualEmbedding& v) {
  block.validate();
  if (static_cast<int>(audio.size()) != block.channels)
    throw std::invalid_argument("fusion: expected " + std::to_string(block.channels) +
                                " channels, got " + std::to_string(audio.size()));
  for (const RMatrix& m : audio)
    if (m.rows() != block.freq || m.cols() != block.time)
      throw std::invalid_argument("fusion: feature map shape " + std::to_string(m.rows()) + "x" +
                                  std::to_string(m.cols()) + " does not match block " +
                                  std::to_string(block.freq) + "x" + std::to_string(block.time));
  if (v.frames() == 0) throw std::invalid_argument("fusion: visual embedding has no frames");
  if (v.dim() != block.visual_dim)
    throw std::invalid_argument("fusion: visual dim " + std::to_string(v.dim()) + ", block expects " +
                                std::to_string(block.visual_dim));
}

// Row-wise softmax, max-shifted.
void softmax_rows(RMatrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
}

}  // namespace

RVector VisualEmbedding::pooled() const {
  if (frames() == 0) throw std::invalid_argument("visual embedding has no frames");
  return data.colwise().mean().transpose();
}

void save_visual_embedding(const std::filesystem::path& path, const VisualEmbedding& v) {
  detail::ByteWriter out;
  out.bytes(kEmbeddingMagic);
  out.u32(static_cast<std::uint32_t>(v.frames()));
  out.u32(static_cast<std::uint32_t>(v.dim()));
  for (Eigen::Index t = 0; t < v.frames(); ++t)
    for (Eigen::Index k = 0; k < v.dim(); ++k) out.f32(static_cast<float>(v.data(t, k)));
  detail::write_file(path.string(), out.data());
}

VisualEmbedding load_visual_embedding(const std::filesystem::path& path) {
  const std::string name = path.string();
  const std::vector<char> buf = detail::read_file(name);
  detail::ByteReader r(buf, name);
  if (buf.size() < kEmbeddingMagic.size() || r.bytes(kEmbeddingMagic.size()) != kEmbeddingMagic)
    throw std::runtime_error(name + ": bad magic, not an AVEMB1 embedding file");
  const std::uint32_t frames = r.u32();
  const std::uint32_t dim = r.u32();
  const std::size_t expected = r.position() + std::size_t{4} * frames * dim;
  if (buf.size() < expected)
    throw std::runtime_error(name + ": truncated file, expected " + std::to_string(expected) +
                             " bytes, got " + std::to_string(buf.size()));
  VisualEmbedding v;
  v.data.resize(frames, dim);
  for (std::uint32_t t = 0; t < frames; ++t)
    for (std::uint32_t k = 0; k < dim; ++k) v.data(t, k) = r.f32();
  if (!v.data.allFinite()) throw std::runtime_error(name + ": non-finite embedding values");
  return v;
}

void FusionBlock::validate() const {
  if (channels < 1 || freq < 1 || time < 1 || width < 1 || visual_dim < 1)
    throw std::invalid_argument("fusion block: all dimensions must be >= 1");
  if (w_query.rows() != width || w_query.cols() != freq || w_key.rows() != width ||
      w_key.cols() != visual_dim || w_value.rows() != width || w_value.cols() != visual_dim ||
      w_out.rows() != freq || w_out.cols() != width)
    throw std::invalid_argument("fusion block: projection shapes inconsistent with dimensions");
  if (norm_gain.size() != channels || norm_bias.size() != channels)
    throw std::invalid_argument("fusion block: group-norm parameters must have one entry per channel");
  if (groups < 1 || channels % groups != 0)
    throw std::invalid_argument("fusion block: group count must divide channel count");
}

int default_group_count(int channels) {
  for (int g = std::min(8, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

FusionBlock make_fusion_block(int channels, int freq, int time, int visual_dim, int width, Rng& rng) {
  if (channels < 1 || freq < 1 || time < 1 || visual_dim < 1 || width < 0)
    throw std::invalid_argument("make_fusion_block: dimensions must be positive");
  FusionBlock b;
  b.channels = channels;
  b.freq = freq;
  b.time = time;
  b.visual_dim = visual_dim;
  b.width = width > 0 ? width : (freq + 1) / 2;
  auto xavier = [&rng](Eigen::Index rows, Eigen::Index cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    RMatrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
    return m;
  };
  b.w_query = xavier(b.width, freq);
  b.w_key = xavier(b.width, visual_dim);
  b.w_value = xavier(b.width, visual_dim);
  b.w_out = xavier(freq, b.width);
  b.norm_gain = RVector::Ones(channels);
  b.norm_bias = RVector::Zero(channels);
  b.groups = default_group_count(channels);
  return b;
}

std::vector<RMatrix> cross_attention_weights(const FusionBlock& block, const FeatureMap& audio,
                                             const VisualEmbedding& v) {
  check_audio(block, audio, v);
  const RMatrix keys = v.data * block.w_key.transpose();  // T_v x d
  const double scale = 1.0 / std::sqrt(static_cast<double>(block.width));
  std::vector<RMatrix> weights;
  weights.reserve(audio.size());
  for (const RMatrix& channel : audio) {
    // Queries per time column: (W_Q e[:, t])^T, stacked as T x d.
    const RMatrix queries = (block.w_query * channel).transpose();
    RMatrix logits = scale * queries * keys.transpose();  // T x T_v
    softmax_rows(logits);
    weights.push_back(std::move(logits));
  }
  return weights;
}

FeatureMap cross_attention(const FusionBlock& block, const FeatureMap& audio, const VisualEmbedding& v) {
  const std::vector<RMatrix> weights = cross_attention_weights(block, audio, v);
  const RMatrix values = v.data * block.w_value.transpose();  // T_v x d
  FeatureMap out;
  out.reserve(audio.size());
  for (const RMatrix& w : weights) {
    const RMatrix attended = w * values;  // T x d, the C x d x T map for this channel
    out.push_back(block.w_out * attended.transpose());
  }
  return out;
}

FeatureMap group_norm(const FeatureMap& x, int groups, const RVector& gain, const RVector& bias,
                      double eps) {
  const int channels = static_cast<int>(x.size());
  if (groups < 1 || channels % groups != 0)
    throw std::invalid_argument("group_norm: group count must divide channel count");
  if (gain.size() != channels || bias.size() != channels)
    throw std::invalid_argument("group_norm: gain and bias need one entry per channel");
  const int per_group = channels / groups;
  FeatureMap out(x.size());
  for (int g = 0; g < groups; ++g) {
    double sum = 0.0;
    double count = 0.0;
    for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
      sum += x[c].sum();
      count += static_cast<double>(x[c].size());
    }
    const double mean = sum / count;
    double var = 0.0;
    for (int c = g * per_group; c < (g + 1) * per_group; ++c)
      var += (x[c].array() - mean).square().sum();
    var /= count;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (int c = g * per_group; c < (g + 1) * per_group; ++c)
      out[c] = ((x[c].array() - mean) * (inv_std * gain[c]) + bias[c]).matrix();
  }
  return out;
}

FeatureMap cross_attention_fuse(const FusionBlock& block, const FeatureMap& audio,
                                const VisualEmbedding& v) {
  const FeatureMap mixed = cross_attention(block, audio, v);
  FeatureMap out = group_norm(mixed, block.groups, block.norm_gain, block.norm_bias, block.norm_eps);
  for (std::size_t c = 0; c < out.size(); ++c) out[c] += audio[c];
  return out;
}

}  // namespace udiffse
