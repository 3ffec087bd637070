#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "afe/encoder.hpp"
#include "mvf/fusion.hpp"
#include "scan_io/scan_io.hpp"
#include "view_gen/view_gen.hpp"

namespace cvtnet::mvf {

struct ModelConfig {
  views::ProjectionConfig projection;
  afe::EncoderConfig encoder;
  FusionConfig fusion;

  /// "nclt" (default sizes, 5x32x900 inputs), "kitti", "small" (desk-scale
  /// training), "tiny" (gradient checks, a few thousand parameters).
  static ModelConfig preset(std::string_view name);

  void validate() const;
  std::size_t descriptor_dim() const { return 3 * fusion.netvlad.d_output; }
  std::size_t segment_dim() const { return fusion.netvlad.d_output; }
  double input_scale() const { return 1.0 / projection.max_range; }
};

struct GlobalDescriptor {
  std::vector<float> values;  // [g_riv | g_bev | g_fused]
  std::string scan_id;
};

template <typename T>
struct ModelGraph {
  nn::Var<T> a0_riv;
  nn::Var<T> a0_bev;
  InterOutputs<T> inter;
  nn::Var<T> g_riv;
  nn::Var<T> g_bev;
  nn::Var<T> g_fused;
  nn::Var<T> descriptor;  // [1, 3 * d_output]
};

/// The full network: two aligned feature encoders, the inter-transformer and three
/// NetVLAD-MLP heads. Parameters are owned by value; describe() is const and may run
/// concurrently on one instance.
template <typename T>
class CvtNet {
 public:
  CvtNet(ModelConfig config, std::uint64_t seed);
  CvtNet(ModelConfig config, nn::ParamStore<T> params);

  static nn::SpecList param_specs(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const nn::ParamStore<T>& params() const { return params_; }
  nn::ParamStore<T>& params() { return params_; }

  ModelGraph<T> forward(nn::Tape<T>& tape, const views::MultiLayerView& riv,
                        const views::MultiLayerView& bev) const;
  /// Same graph against an external parameter set (gradient checks perturb copies).
  static ModelGraph<T> forward(nn::Tape<T>& tape, const ModelConfig& config, const nn::ParamStore<T>& params,
                               const views::MultiLayerView& riv, const views::MultiLayerView& bev);

  std::vector<T> describe_views(const views::MultiLayerView& riv, const views::MultiLayerView& bev) const;
  GlobalDescriptor describe(const scan::PointCloud& cloud) const;

 private:
  ModelConfig config_;
  nn::ParamStore<T> params_;
};

extern template class CvtNet<float>;
extern template class CvtNet<double>;

}  // namespace cvtnet::mvf
