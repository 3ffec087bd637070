#pragma once

#include <cstddef>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "scan_io/scan_io.hpp"
#include "view_gen/view_gen.hpp"

namespace cvtnet::train {

struct OverlapConfig {
  int width = 360;
  int height = 32;
  double range_gate = 1.0;  // meters
  // Pairs farther apart than this factor times the max range are not rendered (overlap 0).
  double pair_radius_factor = 2.0;

  void validate() const;
};

/// Single-layer range-image projection covering the sensor's field of view.
views::ProjectionConfig overlap_projection(const scan::SensorBounds& bounds, const OverlapConfig& cfg);

/// Fraction of a's valid range-image pixels whose counterpart from b (rendered in a's
/// frame) is valid and within the range gate. Zero when a renders no valid pixel.
double compute_overlap(const scan::PointCloud& a, const scan::Pose& pose_a, const scan::PointCloud& b,
                       const scan::Pose& pose_b, const views::ProjectionConfig& cfg, double range_gate = 1.0);

/// b's points expressed in a's sensor frame.
scan::Pose relative_pose(const scan::Pose& pose_a, const scan::Pose& pose_b);

/// Sparse symmetric overlap matrix over the scans of one dataset. Missing pairs read 0,
/// the diagonal reads 1.
class OverlapTable {
 public:
  explicit OverlapTable(std::size_t scans = 0) : n_(scans) {}

  std::size_t size() const { return n_; }
  double get(std::size_t i, std::size_t j) const;
  void set(std::size_t i, std::size_t j, double overlap);
  std::size_t stored_pairs() const { return values_.size(); }
  /// Largest |o(i,j) - o(j,i)| seen before symmetrizing (zero for hand-built tables).
  double max_asymmetry() const { return max_asymmetry_; }

  /// Both directions are rendered; the stored value is their mean.
  static OverlapTable compute(const scan::TrajectoryDataset& dataset, const OverlapConfig& cfg);

 private:
  std::uint64_t key(std::size_t i, std::size_t j) const;

  std::size_t n_;
  std::unordered_map<std::uint64_t, double> values_;
  double max_asymmetry_ = 0.0;
};

}  // namespace cvtnet::train
