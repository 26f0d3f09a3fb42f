#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dnet {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;
};

// (FPR, TPR) pairs including (0,0) and (1,1), non-decreasing in both
// coordinates.
struct RocCurve {
  std::vector<std::pair<double, double>> points;
};

struct MetricsReport {
  std::optional<double> auc_roc;  // absent when only one class is present
  double accuracy = 0.0;
  ConfusionCounts counts;  // at threshold 0.5
  std::optional<RocCurve> curve;
  std::int64_t n_samples = 0;
};

// Predicted positive iff score >= threshold (ties go positive).
ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels,
                          double threshold);

// Eq.-style rates TP/(TP+FN) and FP/(FP+TN); zero denominators yield 0.
std::pair<double, double> tpr_fpr(const ConfusionCounts& c);

// Threshold sweep over distinct scores (descending); duplicate scores
// collapse to one point. Needs at least one label of each class.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

// Trapezoidal area under roc_curve; equals the Mann-Whitney pair statistic
// with half credit for ties.
double auc(std::span<const double> scores, std::span<const int> labels);

double accuracy(std::span<const double> scores, std::span<const int> labels,
                double threshold = 0.5);

// Builds the full report (threshold 0.5); AUC/curve omitted for single-class
// label sets.
MetricsReport report_from_scores(std::span<const double> scores, std::span<const int> labels);

// CSV row `model,auc_roc,accuracy,n` (auc_roc empty when absent).
void write_report_csv(const std::string& path, const std::string& model_name,
                      const MetricsReport& report);

// Two-column CSV `fpr,tpr`, one row per curve point.
void write_roc_csv(const std::string& path, const RocCurve& curve);

}  // namespace dnet
