#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "dnet/checkpoint.hpp"
#include "dnet/data.hpp"
#include "dnet/metrics.hpp"
#include "dnet/png_io.hpp"
#include "dnet/text.hpp"
#include "dnet/train.hpp"

namespace {

struct EvalArgs {
  std::string checkpoint, data_dir, labels, report_path, roc_path;
  bool tta = false;
  int views = 8;
  std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& a) {
  dnet::Checkpoint ckpt = dnet::load_checkpoint(a.checkpoint);
  dnet::Model model = dnet::restore_model(ckpt);
  dnet::Dataset ds = dnet::load_dataset(a.data_dir, a.labels);
  dnet::MetricsReport report =
      a.tta ? dnet::evaluate_tta(model, ds, dnet::AugmentSpec::defaults(), a.views, a.seed)
            : dnet::evaluate(model, ds);
  dnet::write_report_csv(a.report_path, model.spec.name, report);
  dnet::write_roc_csv(a.roc_path, report.curve ? *report.curve : dnet::RocCurve{});
  std::cout << "auc_roc=" << (report.auc_roc ? dnet::double_str(*report.auc_roc) : "na")
            << " accuracy=" << dnet::double_str(report.accuracy) << " n=" << report.n_samples
            << "\n";
  return 0;
}

struct PredictArgs {
  std::string checkpoint, image_path;
  bool tta = false;
  int views = 8;
  std::uint64_t seed = 0;
};

int run_predict(const PredictArgs& a) {
  dnet::Checkpoint ckpt = dnet::load_checkpoint(a.checkpoint);
  dnet::Model model = dnet::restore_model(ckpt);
  dnet::Tensor image = dnet::image_to_tensor(dnet::read_png_rgb8(a.image_path));
  double score;
  if (a.tta) {
    score = dnet::tta_predict(model, image, dnet::AugmentSpec::defaults(), a.views, a.seed);
  } else {
    score = dnet::tta_predict(model, image, dnet::AugmentSpec::none(), 1, a.seed);
  }
  std::cout << "score=" << dnet::double_str(score) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dense-connectivity CNN training and evaluation"};
  app.require_subcommand(1);

  dnet::TrainConfig cfg;
  std::string augment_flag = "off";
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", cfg.data_dir, "image directory")->required();
  train_cmd->add_option("--labels", cfg.labels_csv, "labels manifest CSV")->required();
  train_cmd->add_option("--preset", cfg.preset, "model preset")
      ->check(CLI::IsMember({"tiny", "densenet201-like"}))
      ->capture_default_str();
  train_cmd->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", cfg.batch_size, "mini-batch size")
      ->capture_default_str();
  train_cmd->add_option("--lr", cfg.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--seed", cfg.seed, "run seed")->capture_default_str();
  train_cmd->add_option("--augment", augment_flag, "training augmentation")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  train_cmd->add_option("--out", cfg.checkpoint_path, "checkpoint output path")->required();
  train_cmd->add_option("--loss-log", cfg.loss_log_path, "loss log CSV output path")
      ->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint path")->required();
  eval_cmd->add_option("--data", ev.data_dir, "image directory")->required();
  eval_cmd->add_option("--labels", ev.labels, "labels manifest CSV")->required();
  eval_cmd->add_option("--report", ev.report_path, "metrics report CSV output")->required();
  eval_cmd->add_option("--roc", ev.roc_path, "ROC curve CSV output")->required();
  eval_cmd->add_flag("--tta", ev.tta, "average augmented views per sample");
  eval_cmd->add_option("--views", ev.views, "TTA view count")->capture_default_str();
  eval_cmd->add_option("--seed", ev.seed, "TTA seed")->capture_default_str();

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "score one image");
  predict_cmd->add_option("--checkpoint", pr.checkpoint, "checkpoint path")->required();
  predict_cmd->add_option("--image", pr.image_path, "PNG image path")->required();
  predict_cmd->add_flag("--tta", pr.tta, "average augmented views");
  predict_cmd->add_option("--views", pr.views, "TTA view count")->capture_default_str();
  predict_cmd->add_option("--seed", pr.seed, "TTA seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      cfg.augment = (augment_flag == "on");
      dnet::train(cfg);
      return 0;
    }
    if (*eval_cmd) return run_eval(ev);
    if (*predict_cmd) return run_predict(pr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
