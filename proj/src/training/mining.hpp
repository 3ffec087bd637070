#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "training/overlap.hpp"

namespace cvtnet::train {

struct TrainConfig {
  std::size_t k_pos = 6;
  std::size_t k_neg = 6;
  double alpha = 0.5;
  double overlap_threshold = 0.3;
  double learning_rate = 0.02;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  // Trailing share of the trajectory held out for validation.
  double validation_fraction = 0.2;
  // Rotate each training scan by a random whole number of columns.
  bool yaw_augment = false;
  // Tuples whose gradients are averaged before each SGD step.
  std::size_t batch_tuples = 4;
  // Global gradient-norm ceiling applied before the step; 0 disables.
  double grad_clip = 1.0;
  OverlapConfig overlap;

  void validate() const;
};

struct TrainingTuple {
  std::size_t query = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

struct MiningStats {
  std::size_t candidates = 0;
  std::size_t emitted = 0;
  std::size_t skipped_few_positives = 0;
  std::size_t skipped_few_negatives = 0;
};

/// One tuple per eligible query in `pool`, in a seed-determined order. Positives have
/// overlap above the threshold, negatives at or below it; both are drawn uniformly
/// without replacement from `pool`. Queries short of k_pos positives or k_neg
/// negatives are skipped and counted. Throws a training error when nothing is emitted.
std::vector<TrainingTuple> mine_tuples(const OverlapTable& table, const std::vector<std::size_t>& pool,
                                       const TrainConfig& cfg, std::uint64_t seed, MiningStats* stats = nullptr);

/// Pool = every scan in the table.
std::vector<TrainingTuple> mine_tuples(const OverlapTable& table, const TrainConfig& cfg, std::uint64_t seed,
                                       MiningStats* stats = nullptr);

}  // namespace cvtnet::train
