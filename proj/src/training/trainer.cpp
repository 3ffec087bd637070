#include "training/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <json.hpp>

#include "common/error.hpp"
#include "neural_core/tape.hpp"

namespace cvtnet::train {

Split trajectory_split(std::size_t scans, double validation_fraction) {
  require(validation_fraction > 0.0 && validation_fraction < 1.0, ErrorCode::Config,
          "validation fraction must lie in (0, 1)");
  const auto held = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(scans)));
  require(held >= 1 && held < scans, ErrorCode::Config,
          "dataset of " + std::to_string(scans) + " scans cannot be split with validation fraction " +
              std::to_string(validation_fraction));
  Split s;
  for (std::size_t i = 0; i < scans; ++i) (i < scans - held ? s.train : s.validation).push_back(i);
  return s;
}

Trainer::Trainer(mvf::CvtNet<float>& model, const scan::TrajectoryDataset& dataset, const OverlapTable& table,
                 TrainConfig config, TrainOutputs outputs)
    : model_(model), dataset_(dataset), table_(table), cfg_(std::move(config)), outputs_(std::move(outputs)) {
  cfg_.validate();
  dataset_.validate();
  require(table_.size() == dataset_.size(), ErrorCode::InvalidArgument,
          "overlap table covers " + std::to_string(table_.size()) + " scans, dataset has " +
              std::to_string(dataset_.size()));
  split_ = trajectory_split(dataset_.size(), cfg_.validation_fraction);
  const auto& proj = model_.config().projection;
  riv_.reserve(dataset_.size());
  bev_.reserve(dataset_.size());
  for (const auto& s : dataset_.scans) {
    riv_.push_back(views::project_riv(s, proj));
    bev_.push_back(views::project_bev(s, proj));
  }
  reversed_.assign(dataset_.size(), false);
  for (const auto& r : dataset_.revisits) {
    if (r.query < reversed_.size()) reversed_[r.query] = r.reversed;
  }
}

std::vector<float> Trainer::describe_cached(std::size_t scan) const {
  return model_.describe_views(riv_[scan], bev_[scan]);
}

ValidationResult Trainer::validate() const {
  const std::size_t dim = model_.config().descriptor_dim();
  db::DescriptorIndex index(dim);
  for (std::size_t i : split_.train) index.insert(std::to_string(i), describe_cached(i));
  std::vector<db::Query> queries;
  for (std::size_t i : split_.validation) queries.push_back({std::to_string(i), describe_cached(i)});
  const auto report = db::evaluate_place_recognition(
      index, queries,
      [&](std::size_t q, std::size_t row) {
        return table_.get(split_.validation[q], split_.train[row]) > cfg_.overlap_threshold;
      },
      db::EvalConfig{{1}, 1});
  ValidationResult v;
  v.ar1 = report.ar(1);
  v.excluded_queries = report.excluded_queries;
  std::size_t fwd_hit = 0, rev_hit = 0;
  for (std::size_t q = 0; q < report.queries.size(); ++q) {
    const auto& out = report.queries[q];
    if (!out.has_positive) continue;
    const bool hit = out.first_positive_rank == 1;
    if (reversed_[split_.validation[q]]) {
      ++v.reversed_queries;
      rev_hit += hit;
    } else {
      ++v.forward_queries;
      fwd_hit += hit;
    }
  }
  if (v.forward_queries) v.ar1_forward = static_cast<double>(fwd_hit) / static_cast<double>(v.forward_queries);
  if (v.reversed_queries) v.ar1_reversed = static_cast<double>(rev_hit) / static_cast<double>(v.reversed_queries);
  return v;
}

double Trainer::step_loss(const TrainingTuple& tuple, nn::ParamStore<float>* grads_into, long yaw_shift_seed) const {
  nn::Tape<float> tape(grads_into != nullptr);
  std::mt19937_64 rng(static_cast<std::uint64_t>(yaw_shift_seed));
  const int w = model_.config().projection.width;
  auto describe = [&](std::size_t scan) {
    if (yaw_shift_seed < 0) return model_.forward(tape, riv_[scan], bev_[scan]).descriptor;
    const long k = static_cast<long>(rng() % static_cast<std::uint64_t>(w));
    return model_.forward(tape, views::column_shift(riv_[scan], k), views::column_shift(bev_[scan], k)).descriptor;
  };
  const auto q = describe(tuple.query);
  std::vector<nn::Var<float>> pos, neg;
  for (std::size_t p : tuple.positives) pos.push_back(describe(p));
  for (std::size_t n : tuple.negatives) neg.push_back(describe(n));
  const auto loss = tape.triplet_loss(q, pos, neg, cfg_.alpha);
  const double value = tape.value(loss)[0];
  if (grads_into) tape.backward(loss, *grads_into);
  return value;
}

void apply_update(nn::ParamStore<float>& params, double learning_rate, std::size_t batch, double grad_clip) {
  double norm2 = 0.0;
  for (const auto& [name, e] : params) {
    for (float g : e.grad.values()) norm2 += static_cast<double>(g) * g;
  }
  require(std::isfinite(norm2), ErrorCode::Training, "gradient norm is not finite");
  const double mean_norm = std::sqrt(norm2) / static_cast<double>(batch);
  double factor = 1.0 / static_cast<double>(batch);
  if (grad_clip > 0.0 && mean_norm > grad_clip) factor *= grad_clip / mean_norm;
  nn::sgd_step(params, learning_rate * factor);
}

void write_checkpoint_sidecar(const std::string& checkpoint_path, const std::string& config_hash, std::size_t epoch,
                              double val_ar1, const nn::ParamStore<float>& params) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(nn::hash_params(params)));
  nlohmann::json meta = {{"config_hash", config_hash}, {"epoch", epoch}, {"val_ar1", val_ar1}, {"param_hash", hash}};
  std::ofstream out(checkpoint_path + ".json", std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write checkpoint sidecar for '" + checkpoint_path + "'");
  out << meta.dump(2) << "\n";
}

TrainReport Trainer::run(const std::function<void(const EpochReport&)>& on_epoch) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  auto elapsed_ms = [&] { return std::chrono::duration<double, std::milli>(Clock::now() - start).count(); };

  std::ofstream log;
  if (!outputs_.log_csv.empty()) {
    log.open(outputs_.log_csv, std::ios::trunc);
    require(static_cast<bool>(log), ErrorCode::Io, "cannot open training log '" + outputs_.log_csv + "'");
    log << "step,epoch,loss,lr,wall_ms\n";
  }

  TrainReport report;
  auto& params = model_.params();
  params.zero_grad();

  EpochReport initial;
  initial.validation = validate();
  initial.wall_ms = elapsed_ms();
  report.epochs.push_back(initial);
  report.best_epoch = 0;
  report.best_val_ar1 = initial.validation.ar1;
  report.best_params = params;
  if (on_epoch) on_epoch(initial);

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    const std::uint64_t epoch_seed = cfg_.seed * 0x9E3779B97F4A7C15ull + epoch;
    const auto tuples = mine_tuples(table_, split_.train, cfg_, epoch_seed, &report.mining);
    EpochReport er;
    er.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t t = 0; t < tuples.size(); ++t) {
      const long shift_seed = cfg_.yaw_augment ? static_cast<long>((epoch_seed ^ (t * 0xBF58476D1CE4E5B9ull)) >> 1) : -1;
      double loss = 0.0;
      try {
        loss = step_loss(tuples[t], &params, shift_seed);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Data) throw;
        fail(ErrorCode::Training, "non-finite value at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step) + " (query scan " + std::to_string(tuples[t].query) +
                                      "): " + e.what());
      }
      if (!std::isfinite(loss)) {
        fail(ErrorCode::Training, "loss became " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                                      ", step " + std::to_string(step));
      }
      report.step_losses.push_back(loss);
      loss_sum += loss;
      if (log) log << step << ',' << epoch << ',' << loss << ',' << cfg_.learning_rate << ',' << elapsed_ms() << '\n';
      ++step;
      const bool batch_end = (t + 1) % cfg_.batch_tuples == 0 || t + 1 == tuples.size();
      if (!batch_end) continue;
      const std::size_t in_batch = t % cfg_.batch_tuples + 1;
      apply_update(params, cfg_.learning_rate, in_batch, cfg_.grad_clip);
      for (const auto& [name, entry] : params) {
        require(entry.value.all_finite(), ErrorCode::Training,
                "parameter '" + name + "' became non-finite at step " + std::to_string(step));
      }
    }
    er.steps = tuples.size();
    er.mean_loss = loss_sum / static_cast<double>(tuples.size());
    er.validation = validate();
    er.wall_ms = elapsed_ms();
    if (er.validation.ar1 > report.best_val_ar1) {
      report.best_val_ar1 = er.validation.ar1;
      report.best_epoch = epoch;
      report.best_params = params;
    }
    report.epochs.push_back(er);
    if (on_epoch) on_epoch(er);
  }
  params = report.best_params;
  if (!outputs_.checkpoint.empty()) {
    nn::save_checkpoint(report.best_params, outputs_.checkpoint);
    write_checkpoint_sidecar(outputs_.checkpoint, outputs_.config_hash, report.best_epoch, report.best_val_ar1,
                             report.best_params);
  }
  return report;
}

}  // namespace cvtnet::train
