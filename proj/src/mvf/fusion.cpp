#include "mvf/fusion.hpp"

#include <cmath>

namespace cvtnet::mvf {

using nn::Tape;
using nn::Var;

void FusionConfig::validate() const {
  require(cross_blocks >= 1, ErrorCode::Config, "inter-transformer needs at least one block");
  require(netvlad.d_inter > 0 && netvlad.clusters > 0 && netvlad.d_hidden > 0 && netvlad.d_output > 0,
          ErrorCode::Config, "NetVLAD sizes must be positive");
  require(netvlad.assign_alpha > 0.0 && std::isfinite(netvlad.assign_alpha), ErrorCode::Config,
          "NetVLAD assign_alpha must be positive");
}

void inter_specs(nn::SpecList& specs, const afe::EncoderConfig& enc, const FusionConfig& cfg) {
  for (const char* branch : {"inter.riv", "inter.bev"}) {
    for (std::size_t l = 0; l < cfg.cross_blocks; ++l) {
      const std::string name = std::string(branch) + "." + std::to_string(l);
      nn::layer_norm_specs(specs, name + ".ln_q", enc.d_model);
      nn::layer_norm_specs(specs, name + ".ln_kv", enc.d_model);
      nn::attention_specs(specs, name + ".attn", enc.d_model);
      nn::layer_norm_specs(specs, name + ".ln_out", enc.d_model);
      nn::ffn_specs(specs, name + ".ffn", enc.d_model, enc.d_ffn);
    }
  }
}

void netvlad_specs(nn::SpecList& specs, const std::string& prefix, std::size_t in_dim, const NetVladConfig& cfg) {
  nn::linear_specs(specs, prefix + ".lift", in_dim, cfg.d_inter);
  nn::linear_specs(specs, prefix + ".assign", cfg.d_inter, cfg.clusters);
  specs.push_back({prefix + ".centers", {cfg.clusters, cfg.d_inter}, cfg.d_inter, nn::Init::Uniform});
  nn::linear_specs(specs, prefix + ".mlp1", cfg.clusters * cfg.d_inter, cfg.d_hidden);
  nn::linear_specs(specs, prefix + ".mlp2", cfg.d_hidden, cfg.d_output);
}

template <typename T>
void init_netvlad_assignment(nn::ParamStore<T>& params, const std::string& prefix, const NetVladConfig& cfg) {
  const auto& c = params.value(prefix + ".centers");
  auto& w = params.mutable_value(prefix + ".assign.weight");
  auto& b = params.mutable_value(prefix + ".assign.bias");
  require(c.shape() == w.shape() && b.size() == cfg.clusters, ErrorCode::Shape,
          prefix + ": assignment and center shapes disagree");
  for (std::size_t k = 0; k < cfg.clusters; ++k) {
    double norm2 = 0.0;
    for (std::size_t d = 0; d < cfg.d_inter; ++d) {
      w.at(k, d) = static_cast<T>(2.0 * cfg.assign_alpha * c.at(k, d));
      norm2 += static_cast<double>(c.at(k, d)) * c.at(k, d);
    }
    b[k] = static_cast<T>(-cfg.assign_alpha * norm2);
  }
}

namespace {

template <typename T>
Var<T> cross_block(Tape<T>& tape, const nn::ParamStore<T>& params, const std::string& name, std::size_t heads,
                   Var<T> own_prev, Var<T> other_a0) {
  const Var<T> q = nn::layer_norm(tape, params, name + ".ln_q", own_prev);
  const Var<T> kv = nn::layer_norm(tape, params, name + ".ln_kv", other_a0);
  const Var<T> att = nn::multi_head_attention(tape, params, name + ".attn", q, kv, kv, heads);
  const Var<T> y = nn::layer_norm(tape, params, name + ".ln_out", tape.add(att, q));
  return tape.add(nn::ffn(tape, params, name + ".ffn", y), y);
}

}  // namespace

template <typename T>
InterOutputs<T> inter_forward(Tape<T>& tape, const nn::ParamStore<T>& params, const afe::EncoderConfig& enc,
                              const FusionConfig& cfg, Var<T> a0_riv, Var<T> a0_bev,
                              const std::string& riv_prefix, const std::string& bev_prefix) {
  require(tape.shape(a0_riv) == tape.shape(a0_bev), ErrorCode::Shape,
          "inter-transformer inputs differ: " + nn::shape_string(tape.shape(a0_riv)) + " vs " +
              nn::shape_string(tape.shape(a0_bev)));
  Var<T> r = a0_riv;
  Var<T> b = a0_bev;
  for (std::size_t l = 0; l < cfg.cross_blocks; ++l) {
    const std::string idx = "." + std::to_string(l);
    const Var<T> next_r = cross_block(tape, params, riv_prefix + idx, enc.n_head, r, a0_bev);
    const Var<T> next_b = cross_block(tape, params, bev_prefix + idx, enc.n_head, b, a0_riv);
    r = next_r;
    b = next_b;
  }
  const Var<T> parts[] = {r, b};
  return {r, b, tape.concat_cols(parts)};
}

template <typename T>
Var<T> netvlad_forward(Tape<T>& tape, const nn::ParamStore<T>& params, const std::string& prefix,
                       const NetVladConfig& cfg, Var<T> tokens) {
  const Var<T> x = nn::linear(tape, params, prefix + ".lift", tokens);
  const Var<T> assign = tape.softmax_rows(nn::linear(tape, params, prefix + ".assign", x));
  Var<T> vlad = tape.vlad_aggregate(assign, x, tape.parameter(params, prefix + ".centers"));
  vlad = tape.l2_normalize_rows(vlad);
  vlad = tape.l2_normalize_rows(tape.reshape(vlad, {1, cfg.clusters * cfg.d_inter}));
  const Var<T> hidden = tape.relu(nn::linear(tape, params, prefix + ".mlp1", vlad));
  return tape.l2_normalize_rows(nn::linear(tape, params, prefix + ".mlp2", hidden));
}

template <typename T>
InterResult<T> inter_transformer(const afe::FeatureVolume<T>& a_r, const afe::FeatureVolume<T>& a_b,
                                 const nn::ParamStore<T>& params, const afe::EncoderConfig& enc,
                                 const FusionConfig& cfg) {
  Tape<T> tape(false);
  const auto out = inter_forward(tape, params, enc, cfg, tape.constant(a_r.tokens), tape.constant(a_b.tokens));
  return {{tape.value(out.riv), afe::ViewTag::Riv},
          {tape.value(out.bev), afe::ViewTag::Bev},
          {tape.value(out.fused), afe::ViewTag::Fused}};
}

template <typename T>
std::vector<T> netvlad_head(const afe::FeatureVolume<T>& f, const nn::ParamStore<T>& params,
                            const std::string& prefix, const NetVladConfig& cfg) {
  Tape<T> tape(false);
  const Var<T> g = netvlad_forward(tape, params, prefix, cfg, tape.constant(f.tokens));
  const auto& v = tape.value(g);
  return {v.values().begin(), v.values().end()};
}

#define CVTNET_INSTANTIATE_MVF(T)                                                                            \
  template InterOutputs<T> inter_forward<T>(Tape<T>&, const nn::ParamStore<T>&, const afe::EncoderConfig&,   \
                                            const FusionConfig&, Var<T>, Var<T>, const std::string&,         \
                                            const std::string&);                                             \
  template Var<T> netvlad_forward<T>(Tape<T>&, const nn::ParamStore<T>&, const std::string&,                 \
                                     const NetVladConfig&, Var<T>);                                          \
  template InterResult<T> inter_transformer<T>(const afe::FeatureVolume<T>&, const afe::FeatureVolume<T>&,   \
                                               const nn::ParamStore<T>&, const afe::EncoderConfig&,          \
                                               const FusionConfig&);                                         \
  template void init_netvlad_assignment<T>(nn::ParamStore<T>&, const std::string&, const NetVladConfig&); \
  template std::vector<T> netvlad_head<T>(const afe::FeatureVolume<T>&, const nn::ParamStore<T>&,            \
                                          const std::string&, const NetVladConfig&);

CVTNET_INSTANTIATE_MVF(float)
CVTNET_INSTANTIATE_MVF(double)

}  // namespace cvtnet::mvf
