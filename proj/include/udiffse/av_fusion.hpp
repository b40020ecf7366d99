#ifndef UDIFFSE_AV_FUSION_HPP
#define UDIFFSE_AV_FUSION_HPP

#include "udiffse/types.hpp"

#include <filesystem>
#include <vector>

namespace udiffse {

/// Per-video-frame visual features, T_v rows by p columns.
struct VisualEmbedding {
  RMatrix data;
  double frame_rate = 25.0;

  static constexpr int kDefaultDim = 768;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }

  /// Mean over the frame axis, length p.
  RVector pooled() const;
};

/// "AVEMB1", u32 T_v, u32 p, then T_v*p float32 values in row-major order.
/// All integers and floats little-endian.
void save_visual_embedding(const std::filesystem::path& path, const VisualEmbedding& v);
VisualEmbedding load_visual_embedding(const std::filesystem::path& path);

/// C feature maps of shape F x T, indexed [channel](freq, time).
using FeatureMap = std::vector<RMatrix>;

/// Single-head cross-attention from audio features (queries) to visual
/// features (keys and values), followed by a group-normalised residual add.
struct FusionBlock {
  int channels = 1;
  int freq = 1;
  int time = 1;
  int width = 1;  // projection width d
  int visual_dim = VisualEmbedding::kDefaultDim;

  RMatrix w_query;  // d x F
  RMatrix w_key;    // d x p
  RMatrix w_value;  // d x p
  RMatrix w_out;    // F x d

  RVector norm_gain;  // per channel
  RVector norm_bias;  // per channel
  int groups = 1;
  double norm_eps = 1e-6;

  void validate() const;
};

/// Largest divisor of `channels` not exceeding min(8, channels).
int default_group_count(int channels);

/// Block with Xavier-uniform projections, unit gain and zero bias. A width of
/// 0 selects ceil(freq / 2).
FusionBlock make_fusion_block(int channels, int freq, int time, int visual_dim, int width, Rng& rng);

/// Softmax attention weights per channel, each T x T_v with rows summing to 1.
std::vector<RMatrix> cross_attention_weights(const FusionBlock& block, const FeatureMap& audio,
                                             const VisualEmbedding& v);

/// Pre-residual attention output, same shape as the audio features.
FeatureMap cross_attention(const FusionBlock& block, const FeatureMap& audio, const VisualEmbedding& v);

/// GroupNorm over channel groups; statistics are taken over every
/// (channel, freq, time) entry of a group.
FeatureMap group_norm(const FeatureMap& x, int groups, const RVector& gain, const RVector& bias,
                      double eps);

/// audio + GroupNorm(cross_attention(audio, v)).
FeatureMap cross_attention_fuse(const FusionBlock& block, const FeatureMap& audio,
                                const VisualEmbedding& v);

}  // namespace udiffse

#endif  // UDIFFSE_AV_FUSION_HPP
