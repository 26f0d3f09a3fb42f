#include "dnet/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dnet/text.hpp"

namespace dnet {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require_paired(std::span<const double> scores, std::span<const int> labels,
                    const char* op) {
  if (scores.size() != labels.size()) {
    std::ostringstream os;
    os << op << ": " << scores.size() << " scores vs " << labels.size() << " labels";
    fail(os.str());
  }
  if (scores.empty()) fail(std::string(op) + ": needs at least one sample");
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != 0 && labels[i] != 1) {
      std::ostringstream os;
      os << op << ": label at index " << i << " is " << labels[i] << ", expected 0 or 1";
      fail(os.str());
    }
}

std::pair<std::int64_t, std::int64_t> class_totals(std::span<const int> labels) {
  std::int64_t pos = 0;
  for (int l : labels) pos += (l == 1);
  return {pos, static_cast<std::int64_t>(labels.size()) - pos};
}

}  // namespace

ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels,
                          double threshold) {
  require_paired(scores, labels, "confusion");
  ConfusionCounts c;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1)
      (predicted ? c.tp : c.fn) += 1;
    else
      (predicted ? c.fp : c.tn) += 1;
  }
  return c;
}

std::pair<double, double> tpr_fpr(const ConfusionCounts& c) {
  const double tpr =
      (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  const double fpr =
      (c.fp + c.tn) > 0 ? static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn) : 0.0;
  return {tpr, fpr};
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  require_paired(scores, labels, "roc_curve");
  const auto [pos, neg] = class_totals(labels);
  if (pos == 0 || neg == 0)
    fail("roc_curve: needs both classes, got " + std::to_string(pos) + " positives and " +
         std::to_string(neg) + " negatives");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  RocCurve curve;
  curve.points.emplace_back(0.0, 0.0);
  std::int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    // one point per distinct score value
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    curve.points.emplace_back(static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos));
  }
  return curve;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  const RocCurve curve = roc_curve(scores, labels);
  double area = 0.0;
  for (size_t i = 1; i < curve.points.size(); ++i) {
    const auto& [x0, y0] = curve.points[i - 1];
    const auto& [x1, y1] = curve.points[i];
    area += (x1 - x0) * (y0 + y1) * 0.5;
  }
  return area;
}

double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  const ConfusionCounts c = confusion(scores, labels, threshold);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(scores.size());
}

MetricsReport report_from_scores(std::span<const double> scores, std::span<const int> labels) {
  require_paired(scores, labels, "report_from_scores");
  MetricsReport r;
  r.n_samples = static_cast<std::int64_t>(scores.size());
  r.counts = confusion(scores, labels, 0.5);
  r.accuracy =
      static_cast<double>(r.counts.tp + r.counts.tn) / static_cast<double>(r.n_samples);
  const auto [pos, neg] = class_totals(labels);
  if (pos > 0 && neg > 0) {
    r.curve = roc_curve(scores, labels);
    double area = 0.0;
    for (size_t i = 1; i < r.curve->points.size(); ++i) {
      const auto& [x0, y0] = r.curve->points[i - 1];
      const auto& [x1, y1] = r.curve->points[i];
      area += (x1 - x0) * (y0 + y1) * 0.5;
    }
    r.auc_roc = area;
  }
  return r;
}

void write_report_csv(const std::string& path, const std::string& model_name,
                      const MetricsReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_report_csv: cannot create '" + path + "'");
  out << "model,auc_roc,accuracy,n\n";
  out << model_name << ',' << (report.auc_roc ? double_str(*report.auc_roc) : std::string())
      << ',' << double_str(report.accuracy) << ',' << report.n_samples << '\n';
  if (!out) throw std::runtime_error("write_report_csv: write failed for '" + path + "'");
}

void write_roc_csv(const std::string& path, const RocCurve& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_roc_csv: cannot create '" + path + "'");
  out << "fpr,tpr\n";
  for (const auto& [fpr, tpr] : curve.points)
    out << double_str(fpr) << ',' << double_str(tpr) << '\n';
  if (!out) throw std::runtime_error("write_roc_csv: write failed for '" + path + "'");
}

}  // namespace dnet
