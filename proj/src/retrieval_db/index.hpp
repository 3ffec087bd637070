#pragma once

#include <cstddef>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cvtnet::db {

struct Hit {
  std::string scan_id;
  std::size_t row = 0;
  double distance = 0.0;  // squared Euclidean
};

/// Insertion-ordered store of fixed-length descriptors with exact top-K search.
/// Readers share a lock; insert takes it exclusively, so a query never sees a half row.
class DescriptorIndex {
 public:
  explicit DescriptorIndex(std::size_t dim = 0);
  DescriptorIndex(const DescriptorIndex& other);
  DescriptorIndex& operator=(const DescriptorIndex& other);

  std::size_t dim() const { return dim_; }
  std::size_t size() const;
  bool empty() const { return size() == 0; }

  void insert(const std::string& scan_id, std::span<const float> descriptor);
  void reserve(std::size_t rows);

  /// Exact k nearest rows by squared Euclidean distance, ascending; equal distances
  /// keep insertion order. k larger than the index returns every row.
  std::vector<Hit> query_topk(std::span<const float> query, std::size_t k) const;

  const std::string& id(std::size_t row) const { return ids_.at(row); }
  std::span<const float> row(std::size_t row) const;
  std::optional<std::size_t> find(const std::string& scan_id) const;

  // File: "CVTD", version u32, count u64, dim u32, then per row
  // (id length u16, id bytes, float32 x dim), little-endian.
  void save(const std::string& path) const;
  static DescriptorIndex load(const std::string& path);

  bool operator==(const DescriptorIndex& other) const;

 private:
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> lookup_;
  mutable std::shared_mutex mutex_;
};

/// Squared Euclidean distance with double accumulation.
double squared_distance(std::span<const float> a, std::span<const float> b);

}  // namespace cvtnet::db
