#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace credtx {

struct MetricsRecord {
  double acc = 0.0;
  double auc = 0.0;
  double ks = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// Threshold sweep from the highest score downwards. Starts at (0,0), ends at
// (1,1); tied scores form a single step.
using RocCurve = std::vector<RocPoint>;

// Fraction of rows where (score >= threshold) agrees with the label.
double accuracy(std::span<const double> scores, std::span<const int> labels,
                double threshold = 0.5);

// Mann-Whitney AUC with half credit for ties. Throws UndefinedMetricError on
// single-class labels.
double auc(std::span<const double> scores, std::span<const int> labels);

// max_t |TPR(t) - FPR(t)| over the distinct score thresholds.
double ks(std::span<const double> scores, std::span<const int> labels);

RocCurve roc_points(std::span<const double> scores, std::span<const int> labels);

// Trapezoidal area under a ROC curve.
double roc_area(const RocCurve& curve);

MetricsRecord evaluate_metrics(std::span<const double> scores, std::span<const int> labels,
                               double threshold = 0.5);

}  // namespace credtx
