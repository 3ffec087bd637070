#include "retrieval_db/index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>

#include "common/binary_io.hpp"
#include "common/error.hpp"

namespace cvtnet::db {
namespace {

constexpr std::uint32_t kIndexVersion = 1;

}  // namespace

double squared_distance(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), ErrorCode::Shape,
          "descriptor length " + std::to_string(b.size()) + " does not match " + std::to_string(a.size()));
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const double d0 = static_cast<double>(a[i]) - b[i];
    const double d1 = static_cast<double>(a[i + 1]) - b[i + 1];
    const double d2 = static_cast<double>(a[i + 2]) - b[i + 2];
    const double d3 = static_cast<double>(a[i + 3]) - b[i + 3];
    s0 += d0 * d0;
    s1 += d1 * d1;
    s2 += d2 * d2;
    s3 += d3 * d3;
  }
  for (; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s0 += d * d;
  }
  return (s0 + s1) + (s2 + s3);
}

DescriptorIndex::DescriptorIndex(std::size_t dim) : dim_(dim) {}

DescriptorIndex::DescriptorIndex(const DescriptorIndex& other) {
  std::shared_lock lock(other.mutex_);
  dim_ = other.dim_;
  ids_ = other.ids_;
  data_ = other.data_;
  lookup_ = other.lookup_;
}

DescriptorIndex& DescriptorIndex::operator=(const DescriptorIndex& other) {
  if (this == &other) return *this;
  DescriptorIndex copy(other);
  std::unique_lock lock(mutex_);
  dim_ = copy.dim_;
  ids_ = std::move(copy.ids_);
  data_ = std::move(copy.data_);
  lookup_ = std::move(copy.lookup_);
  return *this;
}

std::size_t DescriptorIndex::size() const {
  std::shared_lock lock(mutex_);
  return ids_.size();
}

void DescriptorIndex::reserve(std::size_t rows) {
  std::unique_lock lock(mutex_);
  ids_.reserve(rows);
  data_.reserve(rows * dim_);
  lookup_.reserve(rows);
}

void DescriptorIndex::insert(const std::string& scan_id, std::span<const float> descriptor) {
  require(dim_ > 0, ErrorCode::Config, "index dimension is zero");
  require(descriptor.size() == dim_, ErrorCode::Shape,
          "descriptor for '" + scan_id + "' has length " + std::to_string(descriptor.size()) +
              ", index dimension is " + std::to_string(dim_));
  require(scan_id.size() <= std::numeric_limits<std::uint16_t>::max(), ErrorCode::InvalidArgument,
          "scan id longer than 65535 bytes");
  for (float v : descriptor) {
    require(std::isfinite(v), ErrorCode::Data, "descriptor for '" + scan_id + "' is not finite");
  }
  std::unique_lock lock(mutex_);
  require(lookup_.count(scan_id) == 0, ErrorCode::Duplicate, "scan id '" + scan_id + "' is already indexed");
  lookup_.emplace(scan_id, ids_.size());
  ids_.push_back(scan_id);
  data_.insert(data_.end(), descriptor.begin(), descriptor.end());
}

std::span<const float> DescriptorIndex::row(std::size_t r) const {
  require(r < ids_.size(), ErrorCode::InvalidArgument, "row " + std::to_string(r) + " out of range");
  return {data_.data() + r * dim_, dim_};
}

std::optional<std::size_t> DescriptorIndex::find(const std::string& scan_id) const {
  std::shared_lock lock(mutex_);
  auto it = lookup_.find(scan_id);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::vector<Hit> DescriptorIndex::query_topk(std::span<const float> query, std::size_t k) const {
  require(k >= 1, ErrorCode::InvalidArgument, "k must be at least 1");
  std::shared_lock lock(mutex_);
  require(!ids_.empty(), ErrorCode::InvalidArgument, "query against an empty index");
  require(query.size() == dim_, ErrorCode::Shape,
          "query length " + std::to_string(query.size()) + " does not match index dimension " + std::to_string(dim_));
  const std::size_t n = ids_.size();
  std::vector<std::pair<double, std::size_t>> scored(n);
  for (std::size_t r = 0; r < n; ++r) {
    scored[r] = {squared_distance(query, {data_.data() + r * dim_, dim_}), r};
  }
  k = std::min(k, n);
  // Pairs compare by (distance, row), which is the tie-break by insertion order.
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end());
  std::vector<Hit> hits;
  hits.reserve(k);
  for (std::size_t i = 0; i < k; ++i) hits.push_back({ids_[scored[i].second], scored[i].second, scored[i].first});
  return hits;
}

void DescriptorIndex::save(const std::string& path) const {
  std::shared_lock lock(mutex_);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot open '" + path + "' for writing");
  io::write_bytes(out, "CVTD", 4);
  io::write_le<std::uint32_t>(out, kIndexVersion);
  io::write_le<std::uint64_t>(out, ids_.size());
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  for (std::size_t r = 0; r < ids_.size(); ++r) {
    io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(ids_[r].size()));
    io::write_bytes(out, ids_[r].data(), ids_[r].size());
    io::write_bytes(out, data_.data() + r * dim_, dim_ * sizeof(float));
  }
  require(static_cast<bool>(out), ErrorCode::Io, "write to '" + path + "' failed");
}

DescriptorIndex DescriptorIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::NotFound, "cannot open index '" + path + "'");
  io::expect_magic(in, "CVTD", path);
  const auto version = io::read_le<std::uint32_t>(in, "index version");
  require(version == kIndexVersion, ErrorCode::Format,
          "unsupported index version " + std::to_string(version) + " in '" + path + "' (expected " +
              std::to_string(kIndexVersion) + ")");
  const auto count = io::read_le<std::uint64_t>(in, "row count");
  const auto dim = io::read_le<std::uint32_t>(in, "dimension");
  require(dim > 0, ErrorCode::Format, "index '" + path + "' declares dimension 0");
  DescriptorIndex index(dim);
  std::vector<float> buf(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto len = io::read_le<std::uint16_t>(in, "id length");
    std::string id(len, '\0');
    io::read_bytes(in, id.data(), len, "scan id");
    io::read_bytes(in, buf.data(), dim * sizeof(float), "descriptor row");
    index.insert(id, buf);
  }
  in.peek();
  require(in.eof(), ErrorCode::Format, "trailing bytes after " + std::to_string(count) + " rows in '" + path + "'");
  return index;
}

bool DescriptorIndex::operator==(const DescriptorIndex& other) const {
  std::shared_lock a(mutex_);
  std::shared_lock b(other.mutex_);
  return dim_ == other.dim_ && ids_ == other.ids_ && data_ == other.data_;
}

}  // namespace cvtnet::db
