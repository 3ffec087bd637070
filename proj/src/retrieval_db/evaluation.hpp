#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "retrieval_db/index.hpp"

namespace cvtnet::db {

struct Query {
  std::string id;
  std::vector<float> descriptor;
};

/// True when database row `db_row` is a correct match for query number `query`.
using PositivePredicate = std::function<bool(std::size_t query, std::size_t db_row)>;

struct EvalConfig {
  std::vector<std::size_t> recall_at{1, 5, 20};
  // Ranked list length kept per query (at least the largest recall_at).
  std::size_t keep = 20;
};

struct PrPoint {
  double threshold = 0.0;  // top-1 distance accepted as a loop closure
  double precision = 1.0;
  double recall = 0.0;
};

struct QueryOutcome {
  std::string id;
  std::vector<Hit> nearest;
  bool has_positive = false;
  std::size_t first_positive_rank = 0;  // 1-based; 0 when no positive retrieved in `nearest`
};

struct EvalReport {
  std::vector<std::size_t> recall_at;
  std::vector<double> average_recall;  // parallel to recall_at
  double auc = 0.0;
  double f1_max = 0.0;
  std::vector<PrPoint> pr_curve;
  std::size_t evaluated_queries = 0;
  std::size_t excluded_queries = 0;  // queries with no positive anywhere in the database
  std::vector<QueryOutcome> queries;

  /// Recall at N; N must be one of recall_at.
  double ar(std::size_t n) const;
};

/// AR@N over queries that have at least one positive; AUC and F1max from a sweep of the
/// top-1 distance as a loop-closure score (accepted and correct = TP, accepted and wrong
/// = FP, recall relative to queries with a positive). AUC is the step-interpolated area
/// under the precision-recall curve.
EvalReport evaluate_place_recognition(const DescriptorIndex& db, const std::vector<Query>& queries,
                                      const PositivePredicate& is_positive, const EvalConfig& cfg = {});

}  // namespace cvtnet::db
