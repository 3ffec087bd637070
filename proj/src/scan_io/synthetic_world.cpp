#include "scan_io/synthetic_world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

#include "common/error.hpp"

namespace cvtnet::scan {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kNoHit = std::numeric_limits<double>::infinity();

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

// Sum of a few long-wavelength plane waves.
struct Terrain {
  struct Wave {
    double kx, ky, phase, amplitude;
  };
  std::vector<Wave> waves;

  Terrain(std::mt19937_64& rng, double relief) {
    if (relief <= 0.0) return;
    std::uniform_real_distribution<double> dir(0.0, 2 * kPi), wavelength(15.0, 45.0), phase(0.0, 2 * kPi);
    constexpr int kWaves = 4;
    for (int i = 0; i < kWaves; ++i) {
      const double d = dir(rng), k = 2 * kPi / wavelength(rng);
      waves.push_back({k * std::cos(d), k * std::sin(d), phase(rng), relief / kWaves});
    }
  }

  double operator()(double x, double y) const {
    double z = 0.0;
    for (const auto& w : waves) z += w.amplitude * std::sin(w.kx * x + w.ky * y + w.phase);
    return z;
  }
};

// Vertical rectangle (wall) or vertical cylinder (pole) standing on the terrain.
struct Landmark {
  bool wall = true;
  double cx = 0.0, cy = 0.0;
  double ux = 1.0, uy = 0.0;  // wall direction
  double half_width = 0.0;    // wall half width or pole radius
  double base = 0.0, top = 0.0;
  double intensity = 0.5;

  double bounding_radius() const { return half_width; }

  double intersect(const Eigen::Vector3d& o, const Eigen::Vector3d& d) const {
    double t = kNoHit;
    if (wall) {
      const double nx = -uy, ny = ux;
      const double denom = nx * d.x() + ny * d.y();
      if (std::abs(denom) < 1e-12) return kNoHit;
      t = (nx * (cx - o.x()) + ny * (cy - o.y())) / denom;
      if (!(t > 0.0)) return kNoHit;
      const double along = ux * (o.x() + t * d.x() - cx) + uy * (o.y() + t * d.y() - cy);
      if (std::abs(along) > half_width) return kNoHit;
    } else {
      const double px = o.x() - cx, py = o.y() - cy;
      const double a = d.x() * d.x() + d.y() * d.y();
      if (a < 1e-12) return kNoHit;
      const double b = px * d.x() + py * d.y();
      const double c = px * px + py * py - half_width * half_width;
      const double disc = b * b - a * c;
      if (disc < 0.0) return kNoHit;
      t = (-b - std::sqrt(disc)) / a;
      if (!(t > 0.0)) return kNoHit;
    }
    const double z = o.z() + t * d.z();
    return (z >= base && z <= top) ? t : kNoHit;
  }
};

// First crossing of the ray below the terrain within max_t, by marching then bisection.
double intersect_terrain(const Terrain& terrain, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double max_t) {
  if (d.z() >= 0.0) return kNoHit;
  auto height_above = [&](double t) {
    const Eigen::Vector3d p = o + t * d;
    return p.z() - terrain(p.x(), p.y());
  };
  constexpr double kStep = 0.5;
  double lo = 0.0;
  for (double hi = kStep; lo < max_t; hi += kStep) {
    hi = std::min(hi, max_t);
    if (height_above(hi) <= 0.0) {
      for (int it = 0; it < 30; ++it) {
        const double mid = 0.5 * (lo + hi);
        (height_above(mid) > 0.0 ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
    lo = hi;
  }
  return kNoHit;
}

}  // namespace

void WorldConfig::validate() const {
  require(num_scans > 0, ErrorCode::Config, "world needs at least one scan");
  require(num_revisits < num_scans, ErrorCode::Config, "revisits must leave trajectory scans");
  require(landmark_density > 0.0, ErrorCode::Config, "world needs landmarks (zero density)");
  require(wall_fraction >= 0.0 && wall_fraction <= 1.0, ErrorCode::Config, "wall fraction must lie in [0, 1]");
  require(step > 0.0, ErrorCode::Config, "trajectory step must be positive");
  require(range_noise >= 0.0 && terrain_relief >= 0.0 && sensor_height > 0.0, ErrorCode::Config,
          "range noise and terrain relief must be non-negative, sensor height positive");
  require(beam_rows > 0 && beam_columns > 0, ErrorCode::Config, "beam grid must be positive");
  require(bounds.fov_up_deg + bounds.fov_down_deg > 0.0 && bounds.max_range > 0.0, ErrorCode::Config,
          "invalid sensor bounds");
  require(revisits.empty() || revisits.size() == num_revisits, ErrorCode::Config,
          "explicit revisit list must have num_revisits entries");
  for (const auto& r : revisits) {
    require(r.source < num_scans - num_revisits, ErrorCode::Config, "revisit source must be a trajectory scan");
  }
}

TrajectoryDataset generate_synthetic_world(std::uint64_t seed, const WorldConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t path_scans = cfg.num_scans - cfg.num_revisits;

  // Trajectory.
  std::vector<Pose> poses;
  poses.reserve(cfg.num_scans);
  std::normal_distribution<double> turn(0.0, cfg.heading_jitter_deg * kPi / 180.0);
  double x = 0.0, y = 0.0, heading = 0.0;
  for (std::size_t i = 0; i < path_scans; ++i) {
    poses.push_back(Pose::from_yaw(heading, {x, y, 0.0}));
    heading += turn(rng);
    x += cfg.step * std::cos(heading);
    y += cfg.step * std::sin(heading);
  }

  // Revisits.
  std::vector<RevisitPair> pairs;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t j = 0; j < cfg.num_revisits; ++j) {
    RevisitSpec spec;
    if (!cfg.revisits.empty()) {
      spec = cfg.revisits[j];
    } else {
      spec.source = static_cast<std::size_t>((j + 0.5) * path_scans / cfg.num_revisits);
      const double dir = 2 * kPi * unit(rng);
      const double mag = cfg.revisit_offset * unit(rng);
      spec.dx = mag * std::cos(dir);
      spec.dy = mag * std::sin(dir);
      const bool reversed = cfg.reverse_every > 0 && (j % cfg.reverse_every) == cfg.reverse_every - 1;
      spec.yaw_offset = reversed ? kPi : 0.0;
    }
    const Pose& src = poses[spec.source];
    poses.push_back(Pose::from_yaw(src.yaw() + spec.yaw_offset, src.translation + Eigen::Vector3d(spec.dx, spec.dy, 0.0)));
    RevisitPair pair;
    pair.query = path_scans + j;
    pair.source = spec.source;
    pair.dx = spec.dx;
    pair.dy = spec.dy;
    pair.yaw_offset = spec.yaw_offset;
    pair.reversed = std::abs(std::remainder(spec.yaw_offset, 2 * kPi)) > kPi / 2;
    pairs.push_back(pair);
  }

  const Terrain terrain(rng, cfg.terrain_relief);
  for (auto& p : poses) p.translation.z() = terrain(p.translation.x(), p.translation.y()) + cfg.sensor_height;

  // Landmarks over the trajectory bounding box, padded by the sensing range.
  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (const auto& p : poses) {
    min_x = std::min(min_x, p.translation.x());
    max_x = std::max(max_x, p.translation.x());
    min_y = std::min(min_y, p.translation.y());
    max_y = std::max(max_y, p.translation.y());
  }
  const double pad = cfg.bounds.max_range + 10.0;
  min_x -= pad, max_x += pad, min_y -= pad, max_y += pad;
  const double area = (max_x - min_x) * (max_y - min_y);
  std::uniform_real_distribution<double> ux(min_x, max_x), uy(min_y, max_y);
  std::uniform_real_distribution<double> wall_yaw(0.0, kPi), wall_width(2.0, 12.0), wall_height(1.5, 8.0);
  std::uniform_real_distribution<double> pole_height(3.0, 7.0), pole_radius(0.1, 0.4), intensity(0.1, 1.0);
  const auto n_landmarks = std::max<std::size_t>(1, static_cast<std::size_t>(area * cfg.landmark_density / 1000.0));
  std::vector<Landmark> landmarks;
  landmarks.reserve(n_landmarks);
  for (std::size_t i = 0; i < n_landmarks; ++i) {
    Landmark lm;
    lm.cx = ux(rng);
    lm.cy = uy(rng);
    lm.wall = unit(rng) < cfg.wall_fraction;
    if (lm.wall) {
      const double yaw = wall_yaw(rng);
      lm.ux = std::cos(yaw);
      lm.uy = std::sin(yaw);
      lm.half_width = 0.5 * wall_width(rng);
      lm.base = terrain(lm.cx, lm.cy) - 1.0;
      lm.top = lm.base + 1.0 + wall_height(rng);
      lm.intensity = intensity(rng);
    } else {
      lm.half_width = pole_radius(rng);
      lm.base = terrain(lm.cx, lm.cy) - 1.0;
      lm.top = lm.base + 1.0 + pole_height(rng);
      lm.intensity = 0.8;
    }
    // Keep the trajectory itself clear.
    bool blocks = false;
    for (const auto& p : poses) {
      const double dx = p.translation.x() - lm.cx, dy = p.translation.y() - lm.cy;
      if (dx * dx + dy * dy < (lm.half_width + 1.5) * (lm.half_width + 1.5)) {
        blocks = true;
        break;
      }
    }
    if (!blocks) landmarks.push_back(lm);
  }

  // Ray cast every beam of every scan.
  TrajectoryDataset ds;
  ds.bounds = cfg.bounds;
  ds.revisits = std::move(pairs);
  const double up = cfg.bounds.fov_up_deg * kPi / 180.0;
  const double down = -cfg.bounds.fov_down_deg * kPi / 180.0;
  const double max_range = cfg.bounds.max_range;
  std::normal_distribution<double> noise(0.0, cfg.range_noise);
  std::vector<Eigen::Vector3d> beam_dirs;
  beam_dirs.reserve(static_cast<std::size_t>(cfg.beam_rows) * cfg.beam_columns);
  for (int r = 0; r < cfg.beam_rows; ++r) {
    const double el = up - (r + 0.5) * (up - down) / cfg.beam_rows;
    for (int c = 0; c < cfg.beam_columns; ++c) {
      const double az = -kPi + (c + 0.5) * 2 * kPi / cfg.beam_columns;
      beam_dirs.emplace_back(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    }
  }
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Pose& pose = poses[i];
    const Eigen::Vector3d& o = pose.translation;
    std::vector<const Landmark*> near;
    for (const auto& lm : landmarks) {
      const double reach = max_range + lm.bounding_radius();
      const double dx = lm.cx - o.x(), dy = lm.cy - o.y();
      if (dx * dx + dy * dy <= reach * reach) near.push_back(&lm);
    }
    PointCloud cloud;
    char id[32];
    std::snprintf(id, sizeof id, "%06zu", i);
    cloud.scan_id = id;
    for (const auto& ds_dir : beam_dirs) {
      const Eigen::Vector3d d = pose.rotation * ds_dir;
      double best = kNoHit;
      double hit_intensity = 0.05;
      for (const Landmark* lm : near) {
        const double t = lm->intersect(o, d);
        if (t < best) {
          best = t;
          hit_intensity = lm->intensity;
        }
      }
      const double ground = intersect_terrain(terrain, o, d, std::min(best, max_range));
      if (ground < best) {
        best = ground;
        hit_intensity = 0.05;
      }
      if (!(best <= max_range)) continue;
      const double range = cfg.range_noise > 0.0 ? best + noise(rng) : best;
      if (!(range > 0.0) || range > max_range) continue;
      cloud.points.push_back({round_to_float(ds_dir.x() * range), round_to_float(ds_dir.y() * range),
                              round_to_float(ds_dir.z() * range), round_to_float(hit_intensity)});
    }
    require(!cloud.empty(), ErrorCode::Config, "synthetic scan " + cloud.scan_id + " observed no points");
    ds.scans.push_back(std::move(cloud));
  }
  ds.poses = std::move(poses);
  return ds;
}

}  // namespace cvtnet::scan
