#include "afe/encoder.hpp"

namespace cvtnet::afe {

using nn::Tape;
using nn::Tensor;
using nn::Var;

const char* branch_prefix(views::ViewKind kind) { return kind == views::ViewKind::Riv ? "riv" : "bev"; }

void EncoderConfig::validate() const {
  require(d_model > 0 && n_head > 0 && d_model % n_head == 0, ErrorCode::Config,
          "d_model must be a positive multiple of n_head");
  require(d_ffn > 0, ErrorCode::Config, "d_ffn must be positive");
  require(!leg.empty(), ErrorCode::Config, "leg needs at least one stage");
  for (const auto& s : leg) {
    require(s.kernel >= 1 && s.stride >= 1 && s.channels >= 1, ErrorCode::Config,
            "leg stages need positive kernel, stride and channels");
  }
  require(leg.back().channels == d_model, ErrorCode::Config, "last leg stage must output d_model channels");
}

std::vector<ResolvedStage> EncoderConfig::resolve_leg(std::size_t in_channels, std::size_t in_height) const {
  std::vector<ResolvedStage> out;
  std::size_t c = in_channels, h = in_height;
  for (std::size_t i = 0; i < leg.size(); ++i) {
    const bool last = i + 1 == leg.size();
    ResolvedStage r{};
    r.in_channels = c;
    r.in_height = h;
    r.out_channels = leg[i].channels;
    if (last) {
      r.kernel = h;
      r.stride = 1;
    } else {
      r.kernel = leg[i].kernel;
      r.stride = leg[i].stride;
      require(r.kernel <= h, ErrorCode::Shape,
              "leg stage " + std::to_string(i) + ": kernel height " + std::to_string(r.kernel) +
                  " exceeds input height " + std::to_string(h));
    }
    r.out_height = (h - r.kernel) / r.stride + 1;
    out.push_back(r);
    c = r.out_channels;
    h = r.out_height;
  }
  return out;
}

void encoder_specs(nn::SpecList& specs, const std::string& prefix, const EncoderConfig& cfg,
                   std::size_t in_channels, std::size_t in_height) {
  const auto stages = cfg.resolve_leg(in_channels, in_height);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string name = prefix + ".leg." + std::to_string(i);
    const std::size_t fan_in = s.in_channels * s.kernel;
    specs.push_back({name + ".conv.weight", {s.out_channels, s.in_channels, s.kernel, 1}, fan_in, nn::Init::Uniform});
    specs.push_back({name + ".conv.bias", {s.out_channels}, fan_in, nn::Init::Zeros});
    if (cfg.leg_norm == LegNorm::Layer) nn::layer_norm_specs(specs, name + ".norm", s.out_channels);
  }
  for (std::size_t b = 0; b < cfg.intra_blocks; ++b) {
    const std::string name = prefix + ".intra." + std::to_string(b);
    nn::layer_norm_specs(specs, name + ".ln1", cfg.d_model);
    nn::attention_specs(specs, name + ".attn", cfg.d_model);
    nn::layer_norm_specs(specs, name + ".ln2", cfg.d_model);
    nn::ffn_specs(specs, name + ".ffn", cfg.d_model, cfg.d_ffn);
  }
  nn::linear_specs(specs, prefix + ".proj", 2 * cfg.d_model, cfg.d_model);
}

template <typename T>
Tensor<T> view_tensor(const views::MultiLayerView& view, double scale) {
  Tensor<T> t({static_cast<std::size_t>(view.layers()), static_cast<std::size_t>(view.height()),
               static_cast<std::size_t>(view.width())});
  const auto& src = view.data();
  for (std::size_t i = 0; i < src.size(); ++i) t[i] = static_cast<T>(src[i] * scale);
  return t;
}

template <typename T>
FeatureVolume<T> column_shift(const FeatureVolume<T>& f, long k) {
  FeatureVolume<T> out{Tensor<T>(f.tokens.shape()), f.tag};
  const long w = static_cast<long>(f.width());
  const std::size_t c = f.channels();
  const long s = ((k % w) + w) % w;
  for (long col = 0; col < w; ++col) {
    const std::size_t dst = static_cast<std::size_t>((col + s) % w);
    std::copy_n(f.tokens.data() + col * c, c, out.tokens.data() + dst * c);
  }
  return out;
}

template <typename T>
Var<T> leg_forward(Tape<T>& tape, const nn::ParamStore<T>& params, const std::string& prefix,
                   const EncoderConfig& cfg, Var<T> image) {
  const auto& shape = tape.shape(image);
  require(shape.size() == 3, ErrorCode::Shape, "leg expects a [layers, h, w] image");
  const std::size_t w = shape[2];
  // Kernel shapes in the store pin the designed input height.
  const auto& first = params.value(prefix + ".leg.0.conv.weight");
  require(first.dim(1) == shape[0], ErrorCode::Shape,
          "leg expects " + std::to_string(first.dim(1)) + " input layers, got " + std::to_string(shape[0]));
  const auto stages = cfg.resolve_leg(shape[0], shape[1]);
  Var<T> x = image;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string name = prefix + ".leg." + std::to_string(i);
    const auto& kernel = params.value(name + ".conv.weight");
    require(kernel.dim(2) == stages[i].kernel, ErrorCode::Shape,
            "height mismatch: leg stage " + std::to_string(i) + " was built for a different input height");
    x = tape.conv_height(x, tape.parameter(params, name + ".conv.weight"),
                         tape.parameter(params, name + ".conv.bias"), stages[i].stride);
    if (cfg.leg_norm == LegNorm::None) {
      x = tape.relu(x);
      continue;
    }
    // Normalize over channels at each pixel: column-local.
    const std::size_t c = stages[i].out_channels, hw = stages[i].out_height * w;
    Var<T> pix = tape.transpose(tape.reshape(x, {c, hw}));
    pix = nn::layer_norm(tape, params, name + ".norm", pix);
    x = tape.reshape(tape.transpose(tape.relu(pix)), {c, stages[i].out_height, w});
  }
  return tape.transpose(tape.reshape(x, {cfg.d_model, w}));
}

template <typename T>
Var<T> intra_forward(Tape<T>& tape, const nn::ParamStore<T>& params, const std::string& prefix,
                     const EncoderConfig& cfg, Var<T> tokens) {
  require(tape.shape(tokens).size() == 2 && tape.shape(tokens)[1] == cfg.d_model, ErrorCode::Shape,
          "intra-transformer expects " + std::to_string(cfg.d_model) + " channels, got " +
              nn::shape_string(tape.shape(tokens)));
  Var<T> x = tokens;
  for (std::size_t b = 0; b < cfg.intra_blocks; ++b) {
    const std::string name = prefix + ".intra." + std::to_string(b);
    const Var<T> xn = nn::layer_norm(tape, params, name + ".ln1", x);
    const Var<T> att = nn::multi_head_attention(tape, params, name + ".attn", xn, xn, xn, cfg.n_head);
    const Var<T> y = nn::layer_norm(tape, params, name + ".ln2", tape.add(att, xn));
    x = tape.add(nn::ffn(tape, params, name + ".ffn", y), y);
  }
  return x;
}

template <typename T>
Var<T> encode_forward(Tape<T>& tape, const nn::ParamStore<T>& params, const std::string& prefix,
                      const EncoderConfig& cfg, Var<T> image) {
  const Var<T> leg = leg_forward(tape, params, prefix, cfg, image);
  const Var<T> intra = intra_forward(tape, params, prefix, cfg, leg);
  const Var<T> both[] = {leg, intra};
  return nn::linear(tape, params, prefix + ".proj", tape.concat_cols(both));
}

namespace {

ViewTag tag_of(views::ViewKind kind) { return kind == views::ViewKind::Riv ? ViewTag::Riv : ViewTag::Bev; }

}  // namespace

template <typename T>
FeatureVolume<T> overlapnet_leg(const views::MultiLayerView& view, const nn::ParamStore<T>& params,
                                const EncoderConfig& cfg, double input_scale) {
  Tape<T> tape(false);
  const Var<T> x = tape.constant(view_tensor<T>(view, input_scale));
  const Var<T> y = leg_forward(tape, params, branch_prefix(view.kind()), cfg, x);
  return {tape.value(y), tag_of(view.kind())};
}

template <typename T>
FeatureVolume<T> intra_transformer(const FeatureVolume<T>& f, const nn::ParamStore<T>& params,
                                   const EncoderConfig& cfg, views::ViewKind branch) {
  Tape<T> tape(false);
  const Var<T> x = tape.constant(f.tokens);
  const Var<T> y = intra_forward(tape, params, branch_prefix(branch), cfg, x);
  return {tape.value(y), f.tag};
}

template <typename T>
FeatureVolume<T> encode_view(const views::MultiLayerView& view, const nn::ParamStore<T>& params,
                             const EncoderConfig& cfg, double input_scale) {
  Tape<T> tape(false);
  const Var<T> x = tape.constant(view_tensor<T>(view, input_scale));
  const Var<T> y = encode_forward(tape, params, branch_prefix(view.kind()), cfg, x);
  return {tape.value(y), tag_of(view.kind())};
}

#define CVTNET_INSTANTIATE_AFE(T)                                                                        \
  template Tensor<T> view_tensor<T>(const views::MultiLayerView&, double);                               \
  template FeatureVolume<T> column_shift<T>(const FeatureVolume<T>&, long);                              \
  template Var<T> leg_forward<T>(Tape<T>&, const nn::ParamStore<T>&, const std::string&,                 \
                                 const EncoderConfig&, Var<T>);                                          \
  template Var<T> intra_forward<T>(Tape<T>&, const nn::ParamStore<T>&, const std::string&,               \
                                   const EncoderConfig&, Var<T>);                                        \
  template Var<T> encode_forward<T>(Tape<T>&, const nn::ParamStore<T>&, const std::string&,              \
                                    const EncoderConfig&, Var<T>);                                       \
  template FeatureVolume<T> overlapnet_leg<T>(const views::MultiLayerView&, const nn::ParamStore<T>&,    \
                                              const EncoderConfig&, double);                             \
  template FeatureVolume<T> intra_transformer<T>(const FeatureVolume<T>&, const nn::ParamStore<T>&,      \
                                                 const EncoderConfig&, views::ViewKind);                 \
  template FeatureVolume<T> encode_view<T>(const views::MultiLayerView&, const nn::ParamStore<T>&,       \
                                           const EncoderConfig&, double);

CVTNET_INSTANTIATE_AFE(float)
CVTNET_INSTANTIATE_AFE(double)

}  // namespace cvtnet::afe
