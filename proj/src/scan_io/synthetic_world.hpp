#pragma once

#include <cstdint>
#include <vector>

#include "scan_io/scan_io.hpp"

namespace cvtnet::scan {

struct RevisitSpec {
  std::size_t source = 0;
  double dx = 0.0;
  double dy = 0.0;
  double yaw_offset = 0.0;
};

/// Parameters of the procedural desk-scale world: a smooth random-walk trajectory
/// through a field of wall and pole landmarks on gently undulating terrain, followed
/// by a segment of revisits to earlier poses. Scans are ray cast, so nearer surfaces
/// occlude farther ones.
struct WorldConfig {
  std::size_t num_scans = 200;
  std::size_t num_revisits = 40;
  // Every n-th revisit drives the opposite heading (yaw offset pi); 0 disables.
  std::size_t reverse_every = 2;
  // When non-empty, overrides the automatic revisit layout; size must equal num_revisits.
  std::vector<RevisitSpec> revisits;

  double step = 2.0;                // meters between consecutive trajectory scans
  double heading_jitter_deg = 6.0;  // std-dev of heading change per step
  double revisit_offset = 1.0;      // max translation between a revisit and its source
  double landmark_density = 15.0;   // landmarks per 1000 m^2
  double wall_fraction = 0.7;       // remaining landmarks are poles
  double terrain_relief = 1.0;      // peak ground height deviation, meters
  double range_noise = 0.02;        // Gaussian range noise per return, meters
  double sensor_height = 1.8;       // above the local ground
  int beam_rows = 32;
  int beam_columns = 512;
  SensorBounds bounds{15.0, 25.0, 30.0};

  void validate() const;
};

TrajectoryDataset generate_synthetic_world(std::uint64_t seed, const WorldConfig& config);

}  // namespace cvtnet::scan
