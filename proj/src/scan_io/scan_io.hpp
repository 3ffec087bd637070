#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace cvtnet::scan {

struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;

  double range() const;
  double planar_range() const;
};

struct PointCloud {
  std::vector<Point> points;
  std::string scan_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Rigid sensor-to-world transform. Rotation is kept orthonormal with det +1.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose from_yaw(double yaw, const Eigen::Vector3d& translation);
  double yaw() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const;
  Pose inverse() const;
};

struct SensorBounds {
  double fov_up_deg = 10.67;
  double fov_down_deg = 30.67;
  double max_range = 60.0;
};

/// Synthetic worlds record which scans revisit which; loaded datasets may leave this empty.
struct RevisitPair {
  std::size_t query = 0;
  std::size_t source = 0;
  double yaw_offset = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  bool reversed = false;
};

struct TrajectoryDataset {
  std::vector<PointCloud> scans;
  std::vector<Pose> poses;
  SensorBounds bounds;
  std::vector<RevisitPair> revisits;

  std::size_t size() const { return scans.size(); }
  void validate() const;
};

// KITTI-style binary clouds: little-endian float32 (x, y, z, intensity) per point.
PointCloud load_point_cloud(const std::string& path);
void save_point_cloud(const PointCloud& cloud, const std::string& path);
PointCloud parse_point_cloud(const char* bytes, std::size_t length, const std::string& scan_id);

// One pose per line, 12 decimals, row-major 3x4 [R | t].
std::vector<Pose> load_poses(const std::string& path);
std::vector<Pose> parse_poses(const std::string& text);
void save_poses(const std::vector<Pose>& poses, const std::string& path);
Pose make_pose(const double (&row_major_3x4)[12]);

/// Nearest rotation in the Frobenius sense (SVD polar factor).
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m);

PointCloud rotate_yaw(const PointCloud& cloud, double theta);
PointCloud transform(const PointCloud& cloud, const Pose& pose);

/// Manifest is JSON: {"scans": [...], "poses": "...", "fov_up_deg", "fov_down_deg",
/// "max_range", optional "revisits"}. Relative paths resolve against the manifest.
TrajectoryDataset load_dataset(const std::string& manifest_path);
void save_dataset(const TrajectoryDataset& dataset, const std::string& directory);

}  // namespace cvtnet::scan
