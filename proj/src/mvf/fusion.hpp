#pragma once

#include <string>

#include "afe/encoder.hpp"

namespace cvtnet::mvf {

struct NetVladConfig {
  std::size_t d_inter = 1024;
  std::size_t clusters = 64;
  std::size_t d_hidden = 256;
  std::size_t d_output = 256;
  // Assignment starts as softmax_k(-alpha * |x - c_k|^2) around the random centers.
  double assign_alpha = 10.0;
};

struct FusionConfig {
  std::size_t cross_blocks = 2;
  NetVladConfig netvlad;

  void validate() const;
};

void inter_specs(nn::SpecList& specs, const afe::EncoderConfig& enc, const FusionConfig& cfg);
void netvlad_specs(nn::SpecList& specs, const std::string& prefix, std::size_t in_dim, const NetVladConfig& cfg);

/// Sets assign.weight = 2 alpha c and assign.bias = -alpha |c_k|^2 from the head's centers.
template <typename T>
void init_netvlad_assignment(nn::ParamStore<T>& params, const std::string& prefix, const NetVladConfig& cfg);

template <typename T>
struct InterOutputs {
  nn::Var<T> riv;    // A_l^r [w, d]
  nn::Var<T> bev;    // A_l^b [w, d]
  nn::Var<T> fused;  // A_l^f [w, 2d]
};

/// Two mirrored stacks of cross-attention blocks. Queries come from the branch's own
/// evolving feature; keys and values always from the block-0 feature of the other view.
/// `riv_prefix` / `bev_prefix` name the parameter sets of the two branches.
template <typename T>
InterOutputs<T> inter_forward(nn::Tape<T>& tape, const nn::ParamStore<T>& params, const afe::EncoderConfig& enc,
                              const FusionConfig& cfg, nn::Var<T> a0_riv, nn::Var<T> a0_bev,
                              const std::string& riv_prefix = "inter.riv",
                              const std::string& bev_prefix = "inter.bev");

/// Lift tokens, soft-assign to clusters, aggregate residuals, intra- and L2-normalize,
/// MLP down to d_output, L2-normalize. Output [1, d_output].
template <typename T>
nn::Var<T> netvlad_forward(nn::Tape<T>& tape, const nn::ParamStore<T>& params, const std::string& prefix,
                           const NetVladConfig& cfg, nn::Var<T> tokens);

template <typename T>
struct InterResult {
  afe::FeatureVolume<T> riv;
  afe::FeatureVolume<T> bev;
  afe::FeatureVolume<T> fused;
};

template <typename T>
InterResult<T> inter_transformer(const afe::FeatureVolume<T>& a_r, const afe::FeatureVolume<T>& a_b,
                                 const nn::ParamStore<T>& params, const afe::EncoderConfig& enc,
                                 const FusionConfig& cfg);

template <typename T>
std::vector<T> netvlad_head(const afe::FeatureVolume<T>& f, const nn::ParamStore<T>& params,
                            const std::string& prefix, const NetVladConfig& cfg);

}  // namespace cvtnet::mvf
