#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "checks/properties.hpp"
#include "mvf/cvtnet.hpp"
#include "mvf/fusion.hpp"
#include "scan_io/synthetic_world.hpp"
#include "support/helpers.hpp"

using namespace cvtnet;
using namespace cvtnet::mvf;
using afe::FeatureVolume;

namespace {

template <typename T>
FeatureVolume<T> random_features(std::size_t w, std::size_t c, std::uint64_t seed, afe::ViewTag tag) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  nn::Tensor<T> t({w, c});
  for (T& v : t.values()) v = T(g(rng));
  return {std::move(t), tag};
}

template <typename T>
double max_diff(const nn::Tensor<T>& a, const nn::Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

double norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += double(x) * x;
  return std::sqrt(s);
}

scan::PointCloud world_scan(std::uint64_t seed) {
  scan::WorldConfig wc;
  wc.num_scans = 3;
  wc.num_revisits = 0;
  return scan::generate_synthetic_world(seed, wc).scans[1];
}

}  // namespace

TEST_CASE("nclt inter-transformer yields a 512-wide fused feature") {
  const auto m = ModelConfig::preset("nclt");
  const CvtNet<float> net(m, 1);
  const auto r = random_features<float>(900, 256, 1, afe::ViewTag::Riv);
  const auto b = random_features<float>(900, 256, 2, afe::ViewTag::Bev);
  const auto out = inter_transformer(r, b, net.params(), m.encoder, m.fusion);
  CHECK(out.riv.tokens.shape() == nn::Shape{900, 256});
  CHECK(out.bev.tokens.shape() == nn::Shape{900, 256});
  CHECK(out.fused.tokens.shape() == nn::Shape{900, 512});
  CHECK(out.fused.tag == afe::ViewTag::Fused);
}

TEST_CASE("swapping views and branch parameters swaps the inter outputs") {
  const auto m = ModelConfig::preset("small");
  const CvtNet<double> net(m, 6);
  const auto r = random_features<double>(m.projection.width, m.encoder.d_model, 3, afe::ViewTag::Riv);
  const auto b = random_features<double>(m.projection.width, m.encoder.d_model, 4, afe::ViewTag::Bev);
  nn::Tape<double> tape(false);
  const auto vr = tape.constant(r.tokens), vb = tape.constant(b.tokens);
  const auto straight = inter_forward(tape, net.params(), m.encoder, m.fusion, vr, vb);
  const auto swapped = inter_forward(tape, net.params(), m.encoder, m.fusion, vb, vr, "inter.bev", "inter.riv");
  CHECK(max_diff(tape.value(straight.riv), tape.value(swapped.bev)) < 1e-12);
  CHECK(max_diff(tape.value(straight.bev), tape.value(swapped.riv)) < 1e-12);
}

TEST_CASE("inter-transformer commutes with column shifts") {
  const auto m = ModelConfig::preset("small");
  const CvtNet<float> net(m, 7);
  const std::size_t w = m.projection.width;
  const auto r = random_features<float>(w, m.encoder.d_model, 5, afe::ViewTag::Riv);
  const auto b = random_features<float>(w, m.encoder.d_model, 6, afe::ViewTag::Bev);
  const auto base = inter_transformer(r, b, net.params(), m.encoder, m.fusion);
  for (long k : {1L, 17L, long(w - 1)}) {
    const auto s = inter_transformer(afe::column_shift(r, k), afe::column_shift(b, k), net.params(), m.encoder, m.fusion);
    CHECK(max_diff(s.riv.tokens, afe::column_shift(base.riv, k).tokens) < 1e-5);
    CHECK(max_diff(s.fused.tokens, afe::column_shift(base.fused, k).tokens) < 1e-5);
  }
}

TEST_CASE("NetVLAD head") {
  const auto m = ModelConfig::preset("nclt");
  nn::SpecList specs;
  netvlad_specs(specs, "head", 512, m.fusion.netvlad);
  auto params = nn::materialize<float>(specs, 9);
  init_netvlad_assignment(params, "head", m.fusion.netvlad);
  const auto f = random_features<float>(300, 512, 10, afe::ViewTag::Fused);
  const auto g = netvlad_head(f, params, "head", m.fusion.netvlad);
  REQUIRE(g.size() == 256);
  CHECK(norm(g) == doctest::Approx(1.0).epsilon(1e-6));

  SUBCASE("invariant to token order") {
    std::vector<std::size_t> perm(300);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 3; ++trial) {
      std::shuffle(perm.begin(), perm.end(), rng);
      FeatureVolume<float> p{nn::Tensor<float>({300, 512}), afe::ViewTag::Fused};
      for (std::size_t i = 0; i < 300; ++i)
        for (std::size_t c = 0; c < 512; ++c) p.tokens.at(i, c) = f.tokens.at(perm[i], c);
      const auto gp = netvlad_head(p, params, "head", m.fusion.netvlad);
      double worst = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, double(std::abs(g[i] - gp[i])));
      CHECK(worst < 1e-6);
    }
  }
  SUBCASE("duplicating every column leaves the descriptor unchanged") {
    FeatureVolume<float> d{nn::Tensor<float>({600, 512}), afe::ViewTag::Fused};
    for (std::size_t i = 0; i < 600; ++i)
      for (std::size_t c = 0; c < 512; ++c) d.tokens.at(i, c) = f.tokens.at(i / 2, c);
    const auto gd = netvlad_head(d, params, "head", m.fusion.netvlad);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, double(std::abs(g[i] - gd[i])));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("nclt descriptor is 768-d, deterministic and segment-normalized") {
  const CvtNet<float> net(ModelConfig::preset("nclt"), 3);
  const auto cloud = world_scan(2);
  const auto a = net.describe(cloud);
  const auto b = net.describe(cloud);
  REQUIRE(a.values.size() == 768);
  CHECK(a.values == b.values);
  for (std::size_t s = 0; s < 3; ++s)
    CHECK(std::abs(norm(std::span<const float>(a.values).subspan(s * 256, 256)) - 1.0) < 1e-5);
  const auto shape = checks::descriptor_shape(net, cloud);
  CHECK(shape.length == 768);
  CHECK(shape.worst_norm_error < 1e-5);
}

TEST_CASE("graph and value paths agree") {
  const auto m = ModelConfig::preset("small");
  const CvtNet<float> net(m, 12);
  const auto cloud = world_scan(4);
  const auto riv = views::project_riv(cloud, m.projection);
  const auto bev = views::project_bev(cloud, m.projection);
  nn::Tape<float> tape(false);
  const auto graph = net.forward(tape, riv, bev);
  const auto& d = tape.value(graph.descriptor);
  CHECK(d.shape() == nn::Shape{1, m.descriptor_dim()});
  const auto v = net.describe_views(riv, bev);
  CHECK(std::vector<float>(d.values().begin(), d.values().end()) == v);
}

TEST_CASE("descriptor is invariant to whole-column yaw rotations") {
  const auto m = ModelConfig::preset("small");
  const CvtNet<float> net(m, 13);
  scan::SensorBounds bounds;
  bounds.max_range = m.projection.max_range;
  bounds.fov_up_deg = m.projection.fov_up_deg;
  bounds.fov_down_deg = m.projection.fov_down_deg;
  const auto clouds = checks::boundary_safe_clouds(3, 14, bounds, m.projection.width);
  const auto r = checks::yaw_invariance(net, clouds);
  CHECK(r.cases == 12);
  CHECK(r.value < 1e-4);
}

TEST_CASE("checkpoint parameters must match the config") {
  const auto small = CvtNet<float>(ModelConfig::preset("small"), 1);
  CHECK_CVT_ERROR(CvtNet<float>(ModelConfig::preset("tiny"), small.params()), ErrorCode::Shape);
  CHECK_CVT_ERROR(ModelConfig::preset("huge"), ErrorCode::Config);
}
