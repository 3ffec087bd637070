#include "retrieval_db/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include "common/error.hpp"

namespace cvtnet::db {

double EvalReport::ar(std::size_t n) const {
  for (std::size_t i = 0; i < recall_at.size(); ++i) {
    if (recall_at[i] == n) return average_recall[i];
  }
  fail(ErrorCode::InvalidArgument, "recall at " + std::to_string(n) + " was not evaluated");
}

EvalReport evaluate_place_recognition(const DescriptorIndex& db, const std::vector<Query>& queries,
                                      const PositivePredicate& is_positive, const EvalConfig& cfg) {
  require(!cfg.recall_at.empty(), ErrorCode::Config, "recall_at list is empty");
  require(!db.empty(), ErrorCode::Metric, "evaluation database is empty");
  require(!queries.empty(), ErrorCode::Metric, "no queries to evaluate");
  std::vector<std::size_t> ns = cfg.recall_at;
  std::sort(ns.begin(), ns.end());
  require(ns.front() >= 1, ErrorCode::Config, "recall_at values must be >= 1");
  const std::size_t keep = std::max(cfg.keep, ns.back());

  EvalReport report;
  report.recall_at = ns;
  report.average_recall.assign(ns.size(), 0.0);
  report.queries.reserve(queries.size());

  struct Scored {
    double distance;
    bool correct;
    std::size_t order;
  };
  std::vector<Scored> top1;
  std::size_t with_positive = 0;

  for (std::size_t q = 0; q < queries.size(); ++q) {
    QueryOutcome out;
    out.id = queries[q].id;
    for (std::size_t r = 0; r < db.size() && !out.has_positive; ++r) out.has_positive = is_positive(q, r);
    out.nearest = db.query_topk(queries[q].descriptor, keep);
    for (std::size_t i = 0; i < out.nearest.size(); ++i) {
      if (is_positive(q, out.nearest[i].row)) {
        out.first_positive_rank = i + 1;
        break;
      }
    }
    top1.push_back({out.nearest.front().distance, out.first_positive_rank == 1, q});
    if (out.has_positive) {
      ++with_positive;
      for (std::size_t i = 0; i < ns.size(); ++i) {
        if (out.first_positive_rank != 0 && out.first_positive_rank <= ns[i]) report.average_recall[i] += 1.0;
      }
    }
    report.queries.push_back(std::move(out));
  }
  require(with_positive > 0, ErrorCode::Metric, "no query has a positive match in the database");
  report.evaluated_queries = with_positive;
  report.excluded_queries = queries.size() - with_positive;
  for (double& v : report.average_recall) v /= static_cast<double>(with_positive);

  std::sort(top1.begin(), top1.end(), [](const Scored& a, const Scored& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.order < b.order;
  });
  std::size_t tp = 0, fp = 0;
  double prev_recall = 0.0;
  report.pr_curve.push_back({top1.front().distance, 1.0, 0.0});
  for (std::size_t i = 0; i < top1.size();) {
    std::size_t j = i;
    while (j < top1.size() && top1[j].distance == top1[i].distance) {
      (top1[j].correct ? tp : fp) += 1;
      ++j;
    }
    // A query counts as a true positive only when its top-1 match is correct, and
    // correct top-1 implies the query has a positive, so recall stays within [0, 1].
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(with_positive);
    report.auc += (recall - prev_recall) * precision;
    if (precision + recall > 0.0) report.f1_max = std::max(report.f1_max, 2.0 * precision * recall / (precision + recall));
    report.pr_curve.push_back({top1[i].distance, precision, recall});
    prev_recall = recall;
    i = j;
  }
  return report;
}

}  // namespace cvtnet::db
