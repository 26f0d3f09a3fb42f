#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dnet/checkpoint.hpp"
#include "dnet/data.hpp"
#include "dnet/metrics.hpp"
#include "dnet/model.hpp"

namespace dnet {

struct TrainConfig {
  std::string preset = "tiny";
  int epochs = 1;
  int batch_size = 64;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  bool augment = false;  // training-time augmentation (AugmentSpec::defaults())
  std::string data_dir;
  std::string labels_csv;
  std::string checkpoint_path;  // written when non-empty
  std::string loss_log_path;    // written when non-empty
  double train_fraction = 0.8;
  int validate_every = 1;  // epochs between held-out passes; 0 disables
  // Optional cap on total optimizer steps; training stops mid-epoch when hit
  // (not exposed on the CLI; used to bound desk-scale runs).
  std::optional<std::uint64_t> max_batches;
};

struct LossRow {
  std::uint64_t batch_index;  // cumulative optimizer steps
  std::string split;          // "train" or "validation"
  double loss;
};

struct LossLog {
  std::vector<LossRow> rows;
};

// CSV with header `batch_index,split,loss`.
void write_loss_log(const LossLog& log, const std::string& path);

struct TrainResult {
  Checkpoint checkpoint;
  LossLog log;
};

// Core loop over prepared folds: per batch forward -> bce_loss -> backward ->
// adam_step -> zero_grads, training loss logged per batch, held-out loss
// logged per validation cadence (inference mode, no augmentation). A
// non-finite loss aborts naming the batch index. Fully deterministic given
// (config, seed); `resume` continues an earlier run's trajectory exactly.
TrainResult train_split(const Dataset& train_set, const Dataset& heldout,
                        const TrainConfig& config, const Checkpoint* resume = nullptr);

// Loads the dataset, splits train_fraction/rest with a seed-derived shuffle,
// then runs train_split and writes the checkpoint/loss-log files.
TrainResult train(const TrainConfig& config);

// Inference-mode scores for every sample, dataset order.
std::vector<double> collect_scores(Model& model, const Dataset& dataset, int batch_size = 64);

// Plain held-out evaluation at threshold 0.5 (AUC absent for single-class
// datasets).
MetricsReport evaluate(Model& model, const Dataset& dataset);

// Mean score of the raw image plus (n_views - 1) seeded augmented views,
// scored by an arbitrary scalar scorer. The mean is computed as
// s0 + sum(si - s0)/n so identical views reproduce the raw score exactly.
double tta_score(const std::function<double(const Tensor&)>& score_one, const Tensor& image,
                 const AugmentSpec& spec, int n_views, std::uint64_t seed);

// tta_score with the model (inference mode) as the scorer.
double tta_predict(Model& model, const Tensor& image, const AugmentSpec& spec, int n_views,
                   std::uint64_t seed);

// Per-sample tta_predict with seeds derived from (seed, sample position).
MetricsReport evaluate_tta(Model& model, const Dataset& dataset, const AugmentSpec& spec,
                           int n_views, std::uint64_t seed);

}  // namespace dnet
