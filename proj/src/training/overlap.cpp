#include "training/overlap.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace cvtnet::train {

void OverlapConfig::validate() const {
  require(width > 0 && height > 0, ErrorCode::Config, "overlap image size must be positive");
  require(range_gate > 0.0, ErrorCode::Config, "overlap range gate must be positive");
  require(pair_radius_factor > 0.0, ErrorCode::Config, "overlap pair radius factor must be positive");
}

views::ProjectionConfig overlap_projection(const scan::SensorBounds& bounds, const OverlapConfig& cfg) {
  cfg.validate();
  views::ProjectionConfig p;
  p.width = cfg.width;
  p.height = cfg.height;
  p.fov_up_deg = bounds.fov_up_deg;
  p.fov_down_deg = bounds.fov_down_deg;
  p.max_range = bounds.max_range;
  p.riv_intervals = views::IntervalSpec{{0.0, bounds.max_range}, views::SplitKind::Range};
  p.validate();
  return p;
}

scan::Pose relative_pose(const scan::Pose& pose_a, const scan::Pose& pose_b) {
  scan::Pose rel;
  rel.rotation = pose_a.rotation.transpose() * pose_b.rotation;
  rel.translation = pose_a.rotation.transpose() * (pose_b.translation - pose_a.translation);
  return rel;
}

double compute_overlap(const scan::PointCloud& a, const scan::Pose& pose_a, const scan::PointCloud& b,
                       const scan::Pose& pose_b, const views::ProjectionConfig& cfg, double range_gate) {
  require(range_gate > 0.0, ErrorCode::Config, "overlap range gate must be positive");
  const auto ra = views::project_range_image(a, cfg);
  const auto rb = views::project_range_image(scan::transform(b, relative_pose(pose_a, pose_b)), cfg);
  const auto& da = ra.data();
  const auto& db = rb.data();
  std::size_t valid = 0, matched = 0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    if (da[i] <= 0.0f) continue;
    ++valid;
    if (db[i] > 0.0f && std::abs(static_cast<double>(da[i]) - db[i]) < range_gate) ++matched;
  }
  return valid == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(valid);
}

std::uint64_t OverlapTable::key(std::size_t i, std::size_t j) const {
  require(i < n_ && j < n_, ErrorCode::InvalidArgument,
          "overlap index (" + std::to_string(i) + ", " + std::to_string(j) + ") outside table of " +
              std::to_string(n_) + " scans");
  if (i > j) std::swap(i, j);
  return static_cast<std::uint64_t>(i) * n_ + j;
}

double OverlapTable::get(std::size_t i, std::size_t j) const {
  const auto k = key(i, j);
  if (i == j) return 1.0;
  auto it = values_.find(k);
  return it == values_.end() ? 0.0 : it->second;
}

void OverlapTable::set(std::size_t i, std::size_t j, double overlap) {
  const auto k = key(i, j);
  require(i != j, ErrorCode::InvalidArgument, "the overlap diagonal is fixed at 1");
  require(overlap >= 0.0 && overlap <= 1.0, ErrorCode::Data, "overlap must lie in [0, 1]");
  values_[k] = overlap;
}

OverlapTable OverlapTable::compute(const scan::TrajectoryDataset& dataset, const OverlapConfig& cfg) {
  dataset.validate();
  const auto proj = overlap_projection(dataset.bounds, cfg);
  const double radius = cfg.pair_radius_factor * dataset.bounds.max_range;
  const std::size_t n = dataset.size();
  std::vector<views::MultiLayerView> own(n);
  for (std::size_t i = 0; i < n; ++i) own[i] = views::project_range_image(dataset.scans[i], proj);

  auto directed = [&](std::size_t i, std::size_t j) {
    const auto& ra = own[i].data();
    const auto rb =
        views::project_range_image(scan::transform(dataset.scans[j], relative_pose(dataset.poses[i], dataset.poses[j])), proj);
    std::size_t valid = 0, matched = 0;
    for (std::size_t p = 0; p < ra.size(); ++p) {
      if (ra[p] <= 0.0f) continue;
      ++valid;
      if (rb.data()[p] > 0.0f && std::abs(static_cast<double>(ra[p]) - rb.data()[p]) < cfg.range_gate) ++matched;
    }
    return valid == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(valid);
  };

  OverlapTable table(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if ((dataset.poses[i].translation - dataset.poses[j].translation).norm() > radius) continue;
      const double oij = directed(i, j);
      const double oji = directed(j, i);
      table.max_asymmetry_ = std::max(table.max_asymmetry_, std::abs(oij - oji));
      const double mean = 0.5 * (oij + oji);
      if (mean > 0.0) table.set(i, j, mean);
    }
  }
  return table;
}

}  // namespace cvtnet::train
