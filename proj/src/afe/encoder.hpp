#pragma once

#include <string>
#include <vector>

#include "neural_core/layers.hpp"
#include "view_gen/view_gen.hpp"

namespace cvtnet::afe {

enum class ViewTag { Riv, Bev, Fused };

const char* branch_prefix(views::ViewKind kind);

struct LegStage {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t channels = 16;
};

/// Leg stage after resolving against the input height; the last stage's kernel
/// always equals its input height so the output has exactly one row.
struct ResolvedStage {
  std::size_t kernel, stride, in_channels, out_channels, in_height, out_height;
};

/// Normalization after each leg convolution. Both options act on one pixel at a time,
/// so every output column depends only on its own input column.
enum class LegNorm { Layer, None };

struct EncoderConfig {
  std::size_t d_model = 256;
  std::size_t n_head = 4;
  std::size_t d_ffn = 1024;
  std::size_t intra_blocks = 1;
  std::vector<LegStage> leg{{5, 2, 64}, {3, 2, 128}, {3, 2, 128}, {4, 1, 256}};
  LegNorm leg_norm = LegNorm::None;

  void validate() const;
  /// Throws a shape error if a non-final stage does not fit the height.
  std::vector<ResolvedStage> resolve_leg(std::size_t in_channels, std::size_t in_height) const;
};

/// c x 1 x w feature stored token-major: row = column index, column = channel.
template <typename T>
struct FeatureVolume {
  nn::Tensor<T> tokens;  // [w, c]
  ViewTag tag = ViewTag::Riv;

  std::size_t width() const { return tokens.dim(0); }
  std::size_t channels() const { return tokens.dim(1); }
  T at(std::size_t channel, std::size_t column) const { return tokens.at(column, channel); }
};

/// Circular shift along width: output column (c + k) mod w takes input column c.
template <typename T>
FeatureVolume<T> column_shift(const FeatureVolume<T>& f, long k);

template <typename T>
nn::Tensor<T> view_tensor(const views::MultiLayerView& view, double scale);

void encoder_specs(nn::SpecList& specs, const std::string& prefix, const EncoderConfig& cfg,
                   std::size_t in_channels, std::size_t in_height);

// Tape-level stages. `prefix` selects the branch ("riv" / "bev").
template <typename T>
nn::Var<T> leg_forward(nn::Tape<T>& tape, const nn::ParamStore<T>& params, const std::string& prefix,
                       const EncoderConfig& cfg, nn::Var<T> image_chw);
template <typename T>
nn::Var<T> intra_forward(nn::Tape<T>& tape, const nn::ParamStore<T>& params, const std::string& prefix,
                         const EncoderConfig& cfg, nn::Var<T> tokens);
template <typename T>
nn::Var<T> encode_forward(nn::Tape<T>& tape, const nn::ParamStore<T>& params, const std::string& prefix,
                          const EncoderConfig& cfg, nn::Var<T> image_chw);

// Value-level wrappers. Views are scaled by `input_scale` before entering the leg.
template <typename T>
FeatureVolume<T> overlapnet_leg(const views::MultiLayerView& view, const nn::ParamStore<T>& params,
                                const EncoderConfig& cfg, double input_scale);
template <typename T>
FeatureVolume<T> intra_transformer(const FeatureVolume<T>& f, const nn::ParamStore<T>& params,
                                   const EncoderConfig& cfg, views::ViewKind branch);
template <typename T>
FeatureVolume<T> encode_view(const views::MultiLayerView& view, const nn::ParamStore<T>& params,
                             const EncoderConfig& cfg, double input_scale);

}  // namespace cvtnet::afe
