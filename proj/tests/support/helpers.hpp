#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "common/error.hpp"
#include "scan_io/scan_io.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cvtnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline cvtnet::scan::PointCloud random_cloud(std::size_t n, double radius, double z_lo, double z_hi,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> xy(-radius, radius), z(z_lo, z_hi), in(0.0, 1.0);
  cvtnet::scan::PointCloud c;
  c.scan_id = "random";
  while (c.points.size() < n) {
    const double x = xy(rng), y = xy(rng);
    if (x * x + y * y < 0.25) continue;
    c.points.push_back({x, y, z(rng), in(rng)});
  }
  return c;
}

// Expects `expr` to throw cvtnet::Error with `code`.
#define CHECK_CVT_ERROR(expr, expected_code)                                  \
  do {                                                                        \
    bool thrown_ = false;                                                     \
    try {                                                                     \
      (void)(expr);                                                           \
    } catch (const cvtnet::Error& e_) {                                       \
      thrown_ = true;                                                         \
      CHECK_MESSAGE(e_.code() == (expected_code), e_.what());                 \
    }                                                                         \
    CHECK_MESSAGE(thrown_, "expected a cvtnet::Error from " #expr);           \
  } while (0)

}  // namespace testing
