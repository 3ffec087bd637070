#include "training/mining.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "common/error.hpp"

namespace cvtnet::train {

void TrainConfig::validate() const {
  require(k_pos >= 1 && k_neg >= 1, ErrorCode::Config, "k_pos and k_neg must be at least 1");
  require(alpha > 0.0, ErrorCode::Config, "triplet margin alpha must be positive");
  require(overlap_threshold > 0.0 && overlap_threshold < 1.0, ErrorCode::Config,
          "overlap threshold must lie in (0, 1)");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorCode::Config,
          "learning rate must be finite and non-negative");
  require(validation_fraction > 0.0 && validation_fraction < 1.0, ErrorCode::Config,
          "validation fraction must lie in (0, 1)");
  require(batch_tuples >= 1, ErrorCode::Config, "batch_tuples must be at least 1");
  require(grad_clip >= 0.0 && std::isfinite(grad_clip), ErrorCode::Config, "grad_clip must be finite and >= 0");
  overlap.validate();
}

namespace {

// Partial Fisher-Yates with a fixed draw rule, so the stream only depends on the engine.
std::vector<std::size_t> sample(std::vector<std::size_t> items, std::size_t k, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t span = items.size() - i;
    const std::size_t j = i + static_cast<std::size_t>(rng() % span);
    std::swap(items[i], items[j]);
  }
  items.resize(k);
  return items;
}

}  // namespace

std::vector<TrainingTuple> mine_tuples(const OverlapTable& table, const std::vector<std::size_t>& pool,
                                       const TrainConfig& cfg, std::uint64_t seed, MiningStats* stats) {
  cfg.validate();
  MiningStats local;
  MiningStats& st = stats ? *stats : local;
  st = {};
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order = pool;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

  std::vector<TrainingTuple> tuples;
  for (std::size_t q : order) {
    ++st.candidates;
    std::vector<std::size_t> pos, neg;
    for (std::size_t j : pool) {
      if (j == q) continue;
      (table.get(q, j) > cfg.overlap_threshold ? pos : neg).push_back(j);
    }
    if (pos.size() < cfg.k_pos) {
      ++st.skipped_few_positives;
      continue;
    }
    if (neg.size() < cfg.k_neg) {
      ++st.skipped_few_negatives;
      continue;
    }
    TrainingTuple t;
    t.query = q;
    t.positives = sample(std::move(pos), cfg.k_pos, rng);
    t.negatives = sample(std::move(neg), cfg.k_neg, rng);
    tuples.push_back(std::move(t));
  }
  st.emitted = tuples.size();
  require(!tuples.empty(), ErrorCode::Training,
          "no valid training queries among " + std::to_string(st.candidates) + " candidates (" +
              std::to_string(st.skipped_few_positives) + " with fewer than " + std::to_string(cfg.k_pos) +
              " positives, " + std::to_string(st.skipped_few_negatives) + " with fewer than " +
              std::to_string(cfg.k_neg) + " negatives)");
  return tuples;
}

std::vector<TrainingTuple> mine_tuples(const OverlapTable& table, const TrainConfig& cfg, std::uint64_t seed,
                                       MiningStats* stats) {
  std::vector<std::size_t> pool(table.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  return mine_tuples(table, pool, cfg, seed, stats);
}

}  // namespace cvtnet::train
