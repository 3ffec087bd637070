#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scan_io/scan_io.hpp"

namespace cvtnet::views {

enum class ViewKind : std::uint8_t { Riv = 0, Bev = 1 };
enum class SplitKind : std::uint8_t { Range = 0, Height = 1 };
enum class BevValue : std::uint8_t { PlanarRange = 0, Occupancy = 1 };

/// Strictly increasing boundaries b_0 < ... < b_q defining q half-open layers
/// [b_{i-1}, b_i); the last layer is closed at b_q.
struct IntervalSpec {
  std::vector<double> boundaries;
  SplitKind kind = SplitKind::Range;

  std::size_t layers() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
  double lower() const { return boundaries.front(); }
  double upper() const { return boundaries.back(); }
  /// Layer index for value, or -1 when outside [b_0, b_q].
  int layer_of(double value) const;
  void validate() const;
};

struct ProjectionConfig {
  int width = 900;
  int height = 32;
  double fov_up_deg = 10.67;
  double fov_down_deg = 30.67;
  double max_range = 60.0;
  IntervalSpec riv_intervals{{0.0, 15.0, 30.0, 45.0, 60.0}, SplitKind::Range};
  IntervalSpec bev_intervals{{-4.0, 0.0, 4.0, 8.0, 12.0}, SplitKind::Height};
  BevValue bev_value = BevValue::PlanarRange;

  double fov_total_rad() const;
  void validate() const;
};

/// (q+1) x h x w stack; layers 0..q-1 hold the interval subsets, layer q all points.
/// Zero marks an empty pixel.
class MultiLayerView {
 public:
  MultiLayerView() = default;
  MultiLayerView(ViewKind kind, int layers, int height, int width);

  ViewKind kind() const { return kind_; }
  int layers() const { return layers_; }
  int height() const { return height_; }
  int width() const { return width_; }

  float& at(int layer, int row, int col) { return data_[index(layer, row, col)]; }
  float at(int layer, int row, int col) const { return data_[index(layer, row, col)]; }
  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  std::size_t dropped_points = 0;

  bool operator==(const MultiLayerView& other) const;

 private:
  std::size_t index(int layer, int row, int col) const {
    return (static_cast<std::size_t>(layer) * height_ + row) * width_ + col;
  }

  ViewKind kind_ = ViewKind::Riv;
  int layers_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// Column shared by both view kinds: floor(0.5 * (1 - atan2(y, x) / pi) * w) mod w.
int azimuth_column(double x, double y, int width);
/// Distance in radians from the point's azimuth to the nearest column boundary.
double azimuth_boundary_distance(double x, double y, int width);

struct PixelHit {
  int layer = -1;  // interval layer, or -1 when the point is dropped
  int row = 0;
  int col = 0;
  float value = 0.0f;
};

/// Per-point binning used by both the projection and diagnostics.
PixelHit riv_pixel(const scan::Point& p, const ProjectionConfig& cfg);
PixelHit bev_pixel(const scan::Point& p, const ProjectionConfig& cfg);

MultiLayerView project_riv(const scan::PointCloud& cloud, const ProjectionConfig& cfg);
MultiLayerView project_bev(const scan::PointCloud& cloud, const ProjectionConfig& cfg);

/// Single-layer all-points range image (used for overlap computation).
MultiLayerView project_range_image(const scan::PointCloud& cloud, const ProjectionConfig& cfg);

/// Circular shift along width: output column (c + k) mod w takes input column c.
MultiLayerView column_shift(const MultiLayerView& view, long k);

// Dump format: "CVTV", version u32, kind u8, layers u32, h u32, w u32, float32 layer-major.
void save_view(const MultiLayerView& view, const std::string& path);
MultiLayerView load_view(const std::string& path);

}  // namespace cvtnet::views
