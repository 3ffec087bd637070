#include "view_gen/view_gen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "common/binary_io.hpp"
#include "common/error.hpp"

namespace cvtnet::views {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::uint32_t kViewVersion = 1;

double deg2rad(double d) { return d * kPi / 180.0; }

void keep_min(float& pixel, float value) {
  if (pixel == 0.0f || value < pixel) pixel = value;
}

}  // namespace

int IntervalSpec::layer_of(double value) const {
  if (boundaries.size() < 2 || value < boundaries.front() || value > boundaries.back()) return -1;
  if (value == boundaries.back()) return static_cast<int>(boundaries.size()) - 2;
  const auto it = std::upper_bound(boundaries.begin(), boundaries.end(), value);
  return static_cast<int>(it - boundaries.begin()) - 1;
}

void IntervalSpec::validate() const {
  require(boundaries.size() >= 2, ErrorCode::Config, "interval spec needs at least two boundaries");
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    require(boundaries[i - 1] < boundaries[i], ErrorCode::Config,
            "interval boundaries must be strictly increasing");
  }
  if (kind == SplitKind::Range) {
    require(boundaries.front() >= 0.0, ErrorCode::Config, "range intervals must start at >= 0");
  }
}

double ProjectionConfig::fov_total_rad() const { return deg2rad(fov_up_deg + fov_down_deg); }

void ProjectionConfig::validate() const {
  require(width > 0 && height > 0, ErrorCode::Config, "view width and height must be positive");
  require(fov_up_deg + fov_down_deg > 0.0, ErrorCode::Config, "vertical field of view must be positive");
  require(max_range > 0.0, ErrorCode::Config, "max range must be positive");
  riv_intervals.validate();
  bev_intervals.validate();
  require(riv_intervals.kind == SplitKind::Range, ErrorCode::Config, "RIV intervals split by range");
  require(bev_intervals.kind == SplitKind::Height, ErrorCode::Config, "BEV intervals split by height");
}

MultiLayerView::MultiLayerView(ViewKind kind, int layers, int height, int width)
    : kind_(kind),
      layers_(layers),
      height_(height),
      width_(width),
      data_(static_cast<std::size_t>(layers) * height * width, 0.0f) {}

bool MultiLayerView::operator==(const MultiLayerView& other) const {
  return kind_ == other.kind_ && layers_ == other.layers_ && height_ == other.height_ &&
         width_ == other.width_ && data_ == other.data_;
}

int azimuth_column(double x, double y, int width) {
  const double u = 0.5 * (1.0 - std::atan2(y, x) / kPi) * width;
  long col = static_cast<long>(std::floor(u)) % width;
  if (col < 0) col += width;
  return static_cast<int>(col);
}

double azimuth_boundary_distance(double x, double y, int width) {
  const double u = 0.5 * (1.0 - std::atan2(y, x) / kPi) * width;
  const double frac = u - std::floor(u);
  return std::min(frac, 1.0 - frac) * 2.0 * kPi / width;
}

PixelHit riv_pixel(const scan::Point& p, const ProjectionConfig& cfg) {
  PixelHit hit;
  const double r = p.range();
  if (!(r > 0.0)) return hit;
  const int layer = cfg.riv_intervals.layer_of(r);
  if (layer < 0) return hit;
  const double elevation = std::asin(std::clamp(p.z / r, -1.0, 1.0));
  const double up = deg2rad(cfg.fov_up_deg), down = deg2rad(cfg.fov_down_deg);
  if (elevation > up || elevation < -down) return hit;
  const double v = (1.0 - (elevation + up) / cfg.fov_total_rad()) * cfg.height;
  hit.row = std::clamp(static_cast<int>(std::floor(v)), 0, cfg.height - 1);
  hit.col = azimuth_column(p.x, p.y, cfg.width);
  hit.value = static_cast<float>(r);
  hit.layer = layer;
  return hit;
}

PixelHit bev_pixel(const scan::Point& p, const ProjectionConfig& cfg) {
  PixelHit hit;
  const double planar = p.planar_range();
  if (planar > cfg.max_range) return hit;
  const int layer = cfg.bev_intervals.layer_of(p.z);
  if (layer < 0) return hit;
  const double v = planar / cfg.max_range * cfg.height;
  hit.row = std::clamp(static_cast<int>(std::floor(v)), 0, cfg.height - 1);
  hit.col = azimuth_column(p.x, p.y, cfg.width);
  hit.value = cfg.bev_value == BevValue::Occupancy ? 1.0f : static_cast<float>(planar);
  hit.layer = layer;
  return hit;
}

MultiLayerView project_riv(const scan::PointCloud& cloud, const ProjectionConfig& cfg) {
  const int q = static_cast<int>(cfg.riv_intervals.layers());
  MultiLayerView view(ViewKind::Riv, q + 1, cfg.height, cfg.width);
  for (const auto& p : cloud.points) {
    const PixelHit hit = riv_pixel(p, cfg);
    if (hit.layer < 0) {
      ++view.dropped_points;
      continue;
    }
    keep_min(view.at(hit.layer, hit.row, hit.col), hit.value);
    keep_min(view.at(q, hit.row, hit.col), hit.value);
  }
  return view;
}

MultiLayerView project_bev(const scan::PointCloud& cloud, const ProjectionConfig& cfg) {
  const int q = static_cast<int>(cfg.bev_intervals.layers());
  MultiLayerView view(ViewKind::Bev, q + 1, cfg.height, cfg.width);
  for (const auto& p : cloud.points) {
    const PixelHit hit = bev_pixel(p, cfg);
    if (hit.layer < 0) {
      ++view.dropped_points;
      continue;
    }
    keep_min(view.at(hit.layer, hit.row, hit.col), hit.value);
    keep_min(view.at(q, hit.row, hit.col), hit.value);
  }
  return view;
}

MultiLayerView project_range_image(const scan::PointCloud& cloud, const ProjectionConfig& cfg) {
  MultiLayerView view(ViewKind::Riv, 1, cfg.height, cfg.width);
  for (const auto& p : cloud.points) {
    const PixelHit hit = riv_pixel(p, cfg);
    if (hit.layer < 0) {
      ++view.dropped_points;
      continue;
    }
    keep_min(view.at(0, hit.row, hit.col), hit.value);
  }
  return view;
}

MultiLayerView column_shift(const MultiLayerView& view, long k) {
  MultiLayerView out(view.kind(), view.layers(), view.height(), view.width());
  out.dropped_points = view.dropped_points;
  const long w = view.width();
  if (w == 0) return out;
  const long shift = ((k % w) + w) % w;
  for (int l = 0; l < view.layers(); ++l) {
    for (int r = 0; r < view.height(); ++r) {
      for (long c = 0; c < w; ++c) {
        out.at(l, r, static_cast<int>((c + shift) % w)) = view.at(l, r, static_cast<int>(c));
      }
    }
  }
  return out;
}

void save_view(const MultiLayerView& view, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  io::write_bytes(out, "CVTV", 4);
  io::write_le<std::uint32_t>(out, kViewVersion);
  io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(view.kind()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(view.layers()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(view.height()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(view.width()));
  io::write_bytes(out, view.data().data(), view.data().size() * sizeof(float));
  if (!out) fail(ErrorCode::Io, "failed writing " + path);
}

MultiLayerView load_view(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  io::expect_magic(in, "CVTV", path);
  const auto version = io::read_le<std::uint32_t>(in, "version");
  if (version != kViewVersion) {
    fail(ErrorCode::Format, "unsupported view dump version " + std::to_string(version));
  }
  const auto kind = io::read_le<std::uint8_t>(in, "kind");
  require(kind <= 1, ErrorCode::Format, "bad view kind in " + path);
  const auto layers = io::read_le<std::uint32_t>(in, "layers");
  const auto height = io::read_le<std::uint32_t>(in, "height");
  const auto width = io::read_le<std::uint32_t>(in, "width");
  MultiLayerView view(static_cast<ViewKind>(kind), static_cast<int>(layers),
                      static_cast<int>(height), static_cast<int>(width));
  io::read_bytes(in, view.data().data(), view.data().size() * sizeof(float), "view data");
  return view;
}

}  // namespace cvtnet::views
