#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "common/error.hpp"

namespace cvtnet::train {

template <typename T>
double squared_euclidean(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size(), ErrorCode::Shape, "descriptor lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

/// Lazy triplet loss: k_p * (alpha + max_p d(q, p)) - sum_n d(q, n), clamped at zero,
/// with d the squared Euclidean distance and k_p the number of positives given.
template <typename T>
double triplet_loss(std::span<const T> query, const std::vector<std::vector<T>>& positives,
                    const std::vector<std::vector<T>>& negatives, double alpha) {
  require(!positives.empty(), ErrorCode::InvalidArgument, "triplet loss needs at least one positive");
  require(!negatives.empty(), ErrorCode::InvalidArgument, "triplet loss needs at least one negative");
  double hardest = 0.0;
  for (const auto& p : positives) hardest = std::max(hardest, squared_euclidean<T>(query, p));
  double push = 0.0;
  for (const auto& n : negatives) push += squared_euclidean<T>(query, n);
  const double loss = static_cast<double>(positives.size()) * (alpha + hardest) - push;
  return std::max(0.0, loss);
}

}  // namespace cvtnet::train
