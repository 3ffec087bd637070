#include "scan_io/scan_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>
#include <json.hpp>

#include "common/binary_io.hpp"
#include "common/error.hpp"

namespace cvtnet::scan {
namespace fs = std::filesystem;

double Point::range() const { return std::sqrt(x * x + y * y + z * z); }
double Point::planar_range() const { return std::sqrt(x * x + y * y); }

Pose Pose::from_yaw(double yaw, const Eigen::Vector3d& translation) {
  Pose pose;
  const double c = std::cos(yaw), s = std::sin(yaw);
  pose.rotation << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  pose.translation = translation;
  return pose;
}

double Pose::yaw() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }

Eigen::Vector3d Pose::apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

void TrajectoryDataset::validate() const {
  require(scans.size() == poses.size(), ErrorCode::Data,
          "dataset has " + std::to_string(scans.size()) + " scans but " +
              std::to_string(poses.size()) + " poses");
  require(bounds.fov_up_deg + bounds.fov_down_deg > 0.0, ErrorCode::Config,
          "vertical field of view must be positive");
  require(bounds.max_range > 0.0, ErrorCode::Config, "max range must be positive");
}

PointCloud parse_point_cloud(const char* bytes, std::size_t length, const std::string& scan_id) {
  if (length == 0) fail(ErrorCode::Format, "empty cloud: " + scan_id);
  if (length % 16 != 0) fail(ErrorCode::Format, "length not multiple of 16: " + scan_id);
  PointCloud cloud;
  cloud.scan_id = scan_id;
  const std::size_t n = length / 16;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    float rec[4];
    std::memcpy(rec, bytes + 16 * i, 16);
    if (!std::isfinite(rec[0]) || !std::isfinite(rec[1]) || !std::isfinite(rec[2]) ||
        !std::isfinite(rec[3])) {
      fail(ErrorCode::Data, "non-finite value in record " + std::to_string(i) + " of " + scan_id);
    }
    cloud.points.push_back({rec[0], rec[1], rec[2], rec[3]});
  }
  return cloud;
}

PointCloud load_point_cloud(const std::string& path) {
  const auto bytes = io::read_file(path);
  return parse_point_cloud(bytes.data(), bytes.size(), fs::path(path).stem().string());
}

void save_point_cloud(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  for (const auto& p : cloud.points) {
    io::write_le(out, static_cast<float>(p.x));
    io::write_le(out, static_cast<float>(p.y));
    io::write_le(out, static_cast<float>(p.z));
    io::write_le(out, static_cast<float>(p.intensity));
  }
  if (!out) fail(ErrorCode::Io, "failed writing " + path);
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
    fix(2, 2) = -1.0;
    r = svd.matrixU() * fix * svd.matrixV().transpose();
  }
  return r;
}

Pose make_pose(const double (&v)[12]) {
  for (double x : v) {
    if (!std::isfinite(x)) fail(ErrorCode::Data, "non-finite pose value");
  }
  Eigen::Matrix3d r;
  r << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
  if (r.determinant() < 0.0) fail(ErrorCode::Data, "reflection, not rotation");
  const double drift = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (drift > 1e-3) {
    fail(ErrorCode::Data, "rotation not orthonormal (drift " + std::to_string(drift) + ")");
  }
  Pose pose;
  pose.rotation = nearest_rotation(r);
  pose.translation = Eigen::Vector3d(v[3], v[7], v[11]);
  return pose;
}

std::vector<Pose> parse_poses(const std::string& text) {
  std::vector<Pose> poses;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string tok; fields >> tok;) tokens.push_back(tok);
    if (tokens.size() != 12) {
      fail(ErrorCode::Format, "pose line " + std::to_string(line_no) + " has " +
                                  std::to_string(tokens.size()) + " fields, expected 12");
    }
    double v[12];
    for (int i = 0; i < 12; ++i) {
      char* end = nullptr;
      v[i] = std::strtod(tokens[i].c_str(), &end);
      if (end == tokens[i].c_str() || *end != '\0') {
        fail(ErrorCode::Format, "pose line " + std::to_string(line_no) + ": bad number '" +
                                    tokens[i] + "'");
      }
    }
    try {
      poses.push_back(make_pose(v));
    } catch (const Error& e) {
      fail(e.code(), "pose line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return poses;
}

std::vector<Pose> load_poses(const std::string& path) {
  const auto bytes = io::read_file(path);
  return parse_poses(std::string(bytes.begin(), bytes.end()));
}

void save_poses(const std::vector<Pose>& poses, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  char buf[64];
  for (const auto& pose : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        const double v = c < 3 ? pose.rotation(r, c) : pose.translation(r);
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf << ((r == 2 && c == 3) ? '\n' : ' ');
      }
    }
  }
}

PointCloud rotate_yaw(const PointCloud& cloud, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  PointCloud out;
  out.scan_id = cloud.scan_id;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    out.points.push_back({c * p.x - s * p.y, s * p.x + c * p.y, p.z, p.intensity});
  }
  return out;
}

PointCloud transform(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  out.scan_id = cloud.scan_id;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    const Eigen::Vector3d q = pose.apply({p.x, p.y, p.z});
    out.points.push_back({q.x(), q.y(), q.z(), p.intensity});
  }
  return out;
}

TrajectoryDataset load_dataset(const std::string& manifest_path) {
  const auto bytes = io::read_file(manifest_path);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, "manifest " + manifest_path + ": " + e.what());
  }
  const fs::path base = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return (path.is_absolute() ? path : base / path).string();
  };
  TrajectoryDataset ds;
  try {
    for (const auto& s : m.at("scans")) ds.scans.push_back(load_point_cloud(resolve(s.get<std::string>())));
    ds.poses = load_poses(resolve(m.at("poses").get<std::string>()));
    ds.bounds.fov_up_deg = m.at("fov_up_deg").get<double>();
    ds.bounds.fov_down_deg = m.at("fov_down_deg").get<double>();
    ds.bounds.max_range = m.at("max_range").get<double>();
    if (m.contains("revisits")) {
      for (const auto& r : m.at("revisits")) {
        RevisitPair pair;
        pair.query = r.at("query").get<std::size_t>();
        pair.source = r.at("source").get<std::size_t>();
        pair.yaw_offset = r.value("yaw_offset", 0.0);
        pair.dx = r.value("dx", 0.0);
        pair.dy = r.value("dy", 0.0);
        pair.reversed = r.value("reversed", false);
        ds.revisits.push_back(pair);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, "manifest " + manifest_path + ": " + e.what());
  }
  ds.validate();
  return ds;
}

void save_dataset(const TrajectoryDataset& dataset, const std::string& directory) {
  dataset.validate();
  const fs::path dir(directory);
  fs::create_directories(dir / "scans");
  nlohmann::json m;
  m["scans"] = nlohmann::json::array();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scans/%06zu.bin", i);
    save_point_cloud(dataset.scans[i], (dir / name).string());
    m["scans"].push_back(name);
  }
  save_poses(dataset.poses, (dir / "poses.txt").string());
  m["poses"] = "poses.txt";
  m["fov_up_deg"] = dataset.bounds.fov_up_deg;
  m["fov_down_deg"] = dataset.bounds.fov_down_deg;
  m["max_range"] = dataset.bounds.max_range;
  m["revisits"] = nlohmann::json::array();
  for (const auto& r : dataset.revisits) {
    m["revisits"].push_back({{"query", r.query},
                             {"source", r.source},
                             {"yaw_offset", r.yaw_offset},
                             {"dx", r.dx},
                             {"dy", r.dy},
                             {"reversed", r.reversed}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) fail(ErrorCode::Io, "cannot write manifest in " + directory);
  out << m.dump(2) << '\n';
}

}  // namespace cvtnet::scan
