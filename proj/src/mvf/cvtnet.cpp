#include "mvf/cvtnet.hpp"

namespace cvtnet::mvf {

using views::IntervalSpec;
using views::SplitKind;

ModelConfig ModelConfig::preset(std::string_view name) {
  ModelConfig c;
  if (name == "nclt") return c;
  if (name == "kitti") {
    c.projection.height = 64;
    c.projection.fov_up_deg = 3.0;
    c.projection.fov_down_deg = 25.0;
    c.projection.max_range = 80.0;
    c.projection.riv_intervals = IntervalSpec{{0.0, 15.0, 30.0, 45.0, 80.0}, SplitKind::Range};
    c.projection.bev_intervals = IntervalSpec{{-3.0, -1.5, 0.0, 1.5, 5.0}, SplitKind::Height};
    return c;
  }
  if (name == "small") {
    c.projection.width = 64;
    c.projection.height = 16;
    c.projection.fov_up_deg = 15.0;
    c.projection.fov_down_deg = 25.0;
    c.projection.max_range = 30.0;
    c.projection.riv_intervals = IntervalSpec{{0.0, 7.5, 15.0, 22.5, 30.0}, SplitKind::Range};
    c.projection.bev_intervals = IntervalSpec{{-4.0, -1.0, 1.0, 3.0, 7.0}, SplitKind::Height};
    c.encoder.d_model = 32;
    c.encoder.n_head = 4;
    c.encoder.d_ffn = 64;
    c.encoder.leg = {{3, 2, 16}, {3, 2, 32}, {1, 1, 32}};
    c.fusion.netvlad = {32, 8, 32, 32};
    return c;
  }
  if (name == "tiny") {
    c.projection.width = 128;
    c.projection.height = 16;
    c.projection.fov_up_deg = 15.0;
    c.projection.fov_down_deg = 25.0;
    c.projection.max_range = 30.0;
    c.projection.riv_intervals = IntervalSpec{{0.0, 10.0, 20.0, 30.0}, SplitKind::Range};
    c.projection.bev_intervals = IntervalSpec{{-4.0, -1.0, 2.0, 7.0}, SplitKind::Height};
    c.encoder.d_model = 8;
    c.encoder.n_head = 2;
    c.encoder.d_ffn = 4;
    c.encoder.leg = {{5, 3, 4}, {1, 1, 8}};
    c.fusion.cross_blocks = 1;
    c.fusion.netvlad = {8, 4, 16, 8};
    return c;
  }
  fail(ErrorCode::Config, "unknown model preset '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  projection.validate();
  encoder.validate();
  fusion.validate();
  encoder.resolve_leg(projection.riv_intervals.layers() + 1, static_cast<std::size_t>(projection.height));
  encoder.resolve_leg(projection.bev_intervals.layers() + 1, static_cast<std::size_t>(projection.height));
}

template <typename T>
nn::SpecList CvtNet<T>::param_specs(const ModelConfig& config) {
  config.validate();
  nn::SpecList specs;
  const auto h = static_cast<std::size_t>(config.projection.height);
  afe::encoder_specs(specs, "riv", config.encoder, config.projection.riv_intervals.layers() + 1, h);
  afe::encoder_specs(specs, "bev", config.encoder, config.projection.bev_intervals.layers() + 1, h);
  inter_specs(specs, config.encoder, config.fusion);
  const std::size_t d = config.encoder.d_model;
  netvlad_specs(specs, "head.riv", d, config.fusion.netvlad);
  netvlad_specs(specs, "head.bev", d, config.fusion.netvlad);
  netvlad_specs(specs, "head.fused", 2 * d, config.fusion.netvlad);
  return specs;
}

template <typename T>
CvtNet<T>::CvtNet(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(nn::materialize<T>(param_specs(config_), seed)) {
  for (const char* head : {"head.riv", "head.bev", "head.fused"}) {
    init_netvlad_assignment(params_, head, config_.fusion.netvlad);
  }
}

template <typename T>
CvtNet<T>::CvtNet(ModelConfig config, nn::ParamStore<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  nn::check_params(params_, param_specs(config_));
}

template <typename T>
ModelGraph<T> CvtNet<T>::forward(nn::Tape<T>& tape, const ModelConfig& config, const nn::ParamStore<T>& params,
                                 const views::MultiLayerView& riv, const views::MultiLayerView& bev) {
  const auto& pc = config.projection;
  for (const auto* v : {&riv, &bev}) {
    require(v->height() == pc.height && v->width() == pc.width, ErrorCode::Shape,
            "view is " + std::to_string(v->height()) + "x" + std::to_string(v->width()) + ", model expects " +
                std::to_string(pc.height) + "x" + std::to_string(pc.width));
  }
  require(riv.kind() == views::ViewKind::Riv && bev.kind() == views::ViewKind::Bev, ErrorCode::InvalidArgument,
          "forward expects (RIV, BEV) views");
  const double scale = config.input_scale();
  ModelGraph<T> g;
  g.a0_riv = afe::encode_forward(tape, params, "riv", config.encoder, tape.constant(afe::view_tensor<T>(riv, scale)));
  g.a0_bev = afe::encode_forward(tape, params, "bev", config.encoder, tape.constant(afe::view_tensor<T>(bev, scale)));
  g.inter = inter_forward(tape, params, config.encoder, config.fusion, g.a0_riv, g.a0_bev);
  g.g_riv = netvlad_forward(tape, params, "head.riv", config.fusion.netvlad, g.a0_riv);
  g.g_bev = netvlad_forward(tape, params, "head.bev", config.fusion.netvlad, g.a0_bev);
  g.g_fused = netvlad_forward(tape, params, "head.fused", config.fusion.netvlad, g.inter.fused);
  const nn::Var<T> parts[] = {g.g_riv, g.g_bev, g.g_fused};
  g.descriptor = tape.concat_cols(parts);
  return g;
}

template <typename T>
ModelGraph<T> CvtNet<T>::forward(nn::Tape<T>& tape, const views::MultiLayerView& riv,
                                 const views::MultiLayerView& bev) const {
  return forward(tape, config_, params_, riv, bev);
}

template <typename T>
std::vector<T> CvtNet<T>::describe_views(const views::MultiLayerView& riv, const views::MultiLayerView& bev) const {
  nn::Tape<T> tape(false);
  const auto g = forward(tape, riv, bev);
  const auto& v = tape.value(g.descriptor);
  return {v.values().begin(), v.values().end()};
}

template <typename T>
GlobalDescriptor CvtNet<T>::describe(const scan::PointCloud& cloud) const {
  require(!cloud.empty(), ErrorCode::InvalidArgument, "cannot describe an empty cloud");
  const auto riv = views::project_riv(cloud, config_.projection);
  const auto bev = views::project_bev(cloud, config_.projection);
  const auto values = describe_views(riv, bev);
  return {std::vector<float>(values.begin(), values.end()), cloud.scan_id};
}

template class CvtNet<float>;
template class CvtNet<double>;

}  // namespace cvtnet::mvf
