#include "dnet/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dnet/adam.hpp"
#include "dnet/ops.hpp"
#include "dnet/rng.hpp"
#include "dnet/text.hpp"

namespace dnet {

namespace {

// child-seed salts under the run seed
constexpr std::uint64_t kSplitSalt = 2;
constexpr std::uint64_t kModelSalt = 3;
constexpr std::uint64_t kEpochSaltBase = 1000;

bool same_spec(const ModelSpec& a, const ModelSpec& b) {
  if (a.name != b.name || a.in_channels != b.in_channels || a.compression != b.compression)
    return false;
  if (a.stem.out_channels != b.stem.out_channels || a.stem.kernel != b.stem.kernel ||
      a.stem.stride != b.stem.stride || a.stem.padding != b.stem.padding)
    return false;
  if (a.stem.pool.has_value() != b.stem.pool.has_value()) return false;
  if (a.stem.pool &&
      (a.stem.pool->kind != b.stem.pool->kind || a.stem.pool->window != b.stem.pool->window ||
       a.stem.pool->stride != b.stem.pool->stride))
    return false;
  if (a.blocks.size() != b.blocks.size()) return false;
  for (size_t i = 0; i < a.blocks.size(); ++i)
    if (a.blocks[i].num_layers != b.blocks[i].num_layers ||
        a.blocks[i].growth_rate != b.blocks[i].growth_rate ||
        a.blocks[i].in_channels != b.blocks[i].in_channels)
      return false;
  return true;
}

double validation_loss(Model& model, const Dataset& heldout, int batch_size) {
  model.mode = Mode::inference;
  NoGradGuard ng;
  Batches batches(heldout, batch_size, false, 0, std::nullopt);
  double total = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < batches.count(); ++i) {
    Batch b = batches.get(i);
    Tensor scores = model_forward(model, b.images);
    const double mean = bce_loss(scores, b.labels).item();
    total += mean * static_cast<double>(b.labels.numel());
    n += b.labels.numel();
  }
  return total / static_cast<double>(n);
}

}  // namespace

void write_loss_log(const LossLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("loss-log: cannot create '" + path + "'");
  out << "batch_index,split,loss\n";
  for (const auto& row : log.rows)
    out << row.batch_index << ',' << row.split << ',' << double_str(row.loss) << '\n';
  if (!out) throw std::runtime_error("loss-log: write failed for '" + path + "'");
}

TrainResult train_split(const Dataset& train_set, const Dataset& heldout,
                        const TrainConfig& config, const Checkpoint* resume) {
  if (config.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (config.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (config.lr <= 0.0) throw std::invalid_argument("train: lr must be positive");
  if (train_set.empty()) throw std::invalid_argument("train: training fold is empty");

  const ModelSpec spec = ModelSpec::preset(config.preset);
  Model model;
  AdamState adam;
  std::uint64_t seed = config.seed;
  std::uint32_t epoch0 = 0, batch0 = 0;
  std::uint64_t done = 0;
  if (resume) {
    if (!same_spec(resume->spec, spec))
      throw std::invalid_argument("train: checkpoint spec does not match preset '" +
                                  config.preset + "'");
    model = restore_model(*resume);
    adam = restore_adam(*resume);
    seed = resume->train_seed;
    epoch0 = resume->epoch;
    batch0 = resume->batch_in_epoch;
    done = resume->batches_done;
  } else {
    model = build_model(spec, derive_seed(seed, kModelSalt));
  }
  AdamHyper hyper;
  hyper.lr = config.lr;

  const std::optional<AugmentSpec> aug =
      config.augment ? std::optional<AugmentSpec>(AugmentSpec::defaults()) : std::nullopt;

  LossLog log;
  std::uint32_t cursor_epoch = epoch0, cursor_batch = batch0;
  bool capped = false;
  for (std::uint32_t e = epoch0; e < static_cast<std::uint32_t>(config.epochs) && !capped; ++e) {
    model.mode = Mode::training;
    Batches batches(train_set, config.batch_size, true, derive_seed(seed, kEpochSaltBase + e),
                    aug);
    const auto nb = static_cast<std::uint32_t>(batches.count());
    std::uint32_t b = (e == epoch0) ? batch0 : 0;
    for (; b < nb; ++b) {
      Batch batch = batches.get(b);
      Tensor scores = model_forward(model, batch.images);
      Tensor loss = bce_loss(scores, batch.labels);
      const double lv = loss.item();
      ++done;
      if (!std::isfinite(lv)) {
        std::ostringstream os;
        os << "train: non-finite loss at batch " << done;
        throw std::runtime_error(os.str());
      }
      log.rows.push_back({done, "train", lv});
      loss.backward();
      NamedGrads grads = collect_grads(model.named_params);
      adam_step(model.named_params, grads, adam, hyper);
      zero_grads(model.named_params);
      if (config.max_batches && done >= *config.max_batches) {
        ++b;
        capped = true;
        break;
      }
    }
    cursor_epoch = e;
    cursor_batch = b;
    if (b >= nb) {  // epoch completed
      if (config.validate_every > 0 && ((e + 1) % config.validate_every == 0) &&
          !heldout.empty())
        log.rows.push_back({done, "validation", validation_loss(model, heldout,
                                                                config.batch_size)});
      cursor_epoch = e + 1;
      cursor_batch = 0;
    }
  }

  TrainResult result;
  result.checkpoint = snapshot(model, adam, seed, cursor_epoch, cursor_batch, done);
  result.log = std::move(log);
  if (!config.checkpoint_path.empty()) save_checkpoint(result.checkpoint, config.checkpoint_path);
  if (!config.loss_log_path.empty()) write_loss_log(result.log, config.loss_log_path);
  return result;
}

TrainResult train(const TrainConfig& config) {
  Dataset all = load_dataset(config.data_dir, config.labels_csv);
  auto [train_fold, heldout] =
      split(all, config.train_fraction, derive_seed(config.seed, kSplitSalt));
  return train_split(train_fold, heldout, config, nullptr);
}

std::vector<double> collect_scores(Model& model, const Dataset& dataset, int batch_size) {
  model.mode = Mode::inference;
  NoGradGuard ng;
  std::vector<double> scores;
  scores.reserve(dataset.samples.size());
  Batches batches(dataset, batch_size, false, 0, std::nullopt);
  for (std::int64_t i = 0; i < batches.count(); ++i) {
    Batch b = batches.get(i);
    Tensor out = model_forward(model, b.images);
    const auto v = out.values();
    scores.insert(scores.end(), v.begin(), v.end());
  }
  return scores;
}

MetricsReport evaluate(Model& model, const Dataset& dataset) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  const std::vector<double> scores = collect_scores(model, dataset);
  std::vector<int> labels(dataset.samples.size());
  for (size_t i = 0; i < dataset.samples.size(); ++i) labels[i] = dataset.samples[i].label;
  return report_from_scores(scores, labels);
}

double tta_score(const std::function<double(const Tensor&)>& score_one, const Tensor& image,
                 const AugmentSpec& spec, int n_views, std::uint64_t seed) {
  if (n_views < 1) throw std::invalid_argument("tta: n_views must be >= 1");
  const double s0 = score_one(image);
  double delta = 0.0;
  for (int i = 1; i < n_views; ++i) {
    const Tensor view = augment(image, spec, derive_seed(seed, static_cast<std::uint64_t>(i)));
    delta += score_one(view) - s0;
  }
  return s0 + delta / static_cast<double>(n_views);
}

double tta_predict(Model& model, const Tensor& image, const AugmentSpec& spec, int n_views,
                   std::uint64_t seed) {
  model.mode = Mode::inference;
  NoGradGuard ng;
  auto score_one = [&model](const Tensor& img) {
    std::vector<double> v(img.values().begin(), img.values().end());
    Tensor batch(Shape{1, img.dim(0), img.dim(1), img.dim(2)}, std::move(v));
    return model_forward(model, batch).item();
  };
  return tta_score(score_one, image, spec, n_views, seed);
}

MetricsReport evaluate_tta(Model& model, const Dataset& dataset, const AugmentSpec& spec,
                           int n_views, std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("evaluate_tta: dataset is empty");
  std::vector<double> scores(dataset.samples.size());
  std::vector<int> labels(dataset.samples.size());
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    scores[i] = tta_predict(model, dataset.samples[i].image, spec, n_views,
                            derive_seed(seed, 0x2000 + i));
    labels[i] = dataset.samples[i].label;
  }
  return report_from_scores(scores, labels);
}

}  // namespace dnet
