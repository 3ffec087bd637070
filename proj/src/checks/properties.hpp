#pragma once

// Property suites shared by `cvtnet selftest` and the acceptance runner. Each returns
// what it measured; callers decide pass or fail against their own tolerances.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mvf/cvtnet.hpp"
#include "scan_io/scan_io.hpp"

namespace cvtnet::checks {

struct Measurement {
  double value = 0.0;        // worst observed error (or the quantity being checked)
  std::size_t cases = 0;
  std::size_t skipped = 0;   // cases that could not be evaluated (e.g. kinks in a gradient check)
  double seconds = 0.0;
  std::string detail;
};

/// Ray-cast synthetic scans inside `bounds` with every point kept at least `margin`
/// radians away from an azimuth column edge of a `width`-column projection.
std::vector<scan::PointCloud> boundary_safe_clouds(std::size_t count, std::uint64_t seed,
                                                   const scan::SensorBounds& bounds, int width,
                                                   double margin = 1e-6);

/// Worst L-infinity difference between describe(s) and describe(rotate_yaw(s, 2 pi k / w))
/// over the clouds and k in {1, w/4, w/2, w-1}.
Measurement yaw_invariance(const mvf::CvtNet<float>& model, const std::vector<scan::PointCloud>& clouds);

/// Column-shift commutation, `cases` random inputs per stage at 32-bit.
struct ChainReport {
  Measurement projection;
  Measurement leg;
  Measurement intra;
  Measurement inter;
};
ChainReport equivariance_chain(const mvf::ModelConfig& config, std::size_t cases, std::uint64_t seed);

/// Worst difference of the fused NetVLAD head under random token permutations.
Measurement netvlad_permutation(const mvf::ModelConfig& config, std::size_t permutations, std::uint64_t seed);

/// Number of points whose RIV and BEV columns disagree (value) among those kept by both.
Measurement view_alignment(const views::ProjectionConfig& projection, std::size_t clouds, std::size_t points,
                           std::uint64_t seed);

/// Max relative error of the analytic triplet-loss gradient against central differences
/// over every parameter of `config` at 64-bit. Coordinates whose perturbation flips a
/// ReLU, max or clamp branch are retried with smaller steps and counted as skipped if
/// every step crosses a kink.
Measurement gradient_check(const mvf::ModelConfig& config, std::uint64_t seed, double step = 1e-5,
                           double denominator_floor = 1e-8);

/// Hand-evaluated triplet cases; value is the largest absolute deviation.
Measurement triplet_oracle();

/// Top-k over random rows against a naive double-loop oracle. value = 1 when any query
/// disagrees in ids or order, else 0; detail carries the worst single-query latency.
struct RetrievalReport {
  bool exact = false;
  double worst_ms = 0.0;
  double median_ms = 0.0;
  std::size_t queries = 0;
};
RetrievalReport retrieval_oracle(std::size_t rows, std::size_t dim, std::size_t k, std::size_t queries,
                                 std::uint64_t seed);

/// Descriptor length and the worst |1 - ||segment|||.
struct DescriptorShape {
  std::size_t length = 0;
  double worst_norm_error = 0.0;
};
DescriptorShape descriptor_shape(const mvf::CvtNet<float>& model, const scan::PointCloud& cloud);

}  // namespace cvtnet::checks
