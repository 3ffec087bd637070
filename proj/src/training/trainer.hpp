#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mvf/cvtnet.hpp"
#include "retrieval_db/evaluation.hpp"
#include "training/mining.hpp"

namespace cvtnet::train {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Contiguous split by trajectory order: the last `validation_fraction` of scans validate.
Split trajectory_split(std::size_t scans, double validation_fraction);

struct ValidationResult {
  double ar1 = 0.0;
  double ar1_forward = 0.0;
  double ar1_reversed = 0.0;
  std::size_t forward_queries = 0;
  std::size_t reversed_queries = 0;
  std::size_t excluded_queries = 0;
};

struct EpochReport {
  std::size_t epoch = 0;  // 0 = before any update
  std::size_t steps = 0;
  double mean_loss = 0.0;
  ValidationResult validation;
  double wall_ms = 0.0;
};

struct TrainReport {
  std::vector<EpochReport> epochs;
  std::vector<double> step_losses;
  std::size_t best_epoch = 0;
  double best_val_ar1 = 0.0;
  MiningStats mining;
  nn::ParamStore<float> best_params;
};

struct TrainOutputs {
  std::string log_csv;          // step,epoch,loss,lr,wall_ms; empty = no log
  std::string checkpoint;       // best checkpoint; a .json sidecar is written next to it
  std::string config_hash;      // recorded in the sidecar
};

/// Overlap-supervised triplet training with plain SGD over batches of tuples. Views are
/// projected once per scan. After every epoch the model is scored on the held-out split
/// (queries: validation scans, database: training scans, positive: overlap above the
/// threshold) and the best parameters by AR@1 are kept. The model ends holding them.
class Trainer {
 public:
  Trainer(mvf::CvtNet<float>& model, const scan::TrajectoryDataset& dataset, const OverlapTable& table,
          TrainConfig config, TrainOutputs outputs = {});

  TrainReport run(const std::function<void(const EpochReport&)>& on_epoch = {});

  ValidationResult validate() const;
  const Split& split() const { return split_; }

  /// Loss and gradients for one tuple against the model's current parameters.
  double step_loss(const TrainingTuple& tuple, nn::ParamStore<float>* grads_into, long yaw_shift_seed = -1) const;

 private:
  std::vector<float> describe_cached(std::size_t scan) const;

  mvf::CvtNet<float>& model_;
  const scan::TrajectoryDataset& dataset_;
  const OverlapTable& table_;
  TrainConfig cfg_;
  TrainOutputs outputs_;
  Split split_;
  std::vector<views::MultiLayerView> riv_;
  std::vector<views::MultiLayerView> bev_;
  std::vector<bool> reversed_;
};

/// Averages the accumulated gradients over `batch` tuples, rescales them to at most
/// `grad_clip` in global L2 norm (0 = no clipping), then takes one SGD step.
void apply_update(nn::ParamStore<float>& params, double learning_rate, std::size_t batch, double grad_clip);

/// Sidecar metadata for a checkpoint: {"config_hash", "epoch", "val_ar1", "param_hash"}.
void write_checkpoint_sidecar(const std::string& checkpoint_path, const std::string& config_hash, std::size_t epoch,
                              double val_ar1, const nn::ParamStore<float>& params);

}  // namespace cvtnet::train
