#include "credtx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "credtx/errors.hpp"

namespace credtx {

namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("metrics: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (scores.empty()) throw std::invalid_argument("metrics: empty input");
}

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts count_classes(std::span<const int> labels, bool require_both) {
  ClassCounts c;
  for (int y : labels) {
    if (y == 1) {
      ++c.pos;
    } else if (y == 0) {
      ++c.neg;
    } else {
      throw DataError("metrics: label " + std::to_string(y) + " is not 0 or 1");
    }
  }
  if (require_both && (c.pos == 0 || c.neg == 0)) {
    throw UndefinedMetricError("AUC/KS undefined: labels contain a single class");
  }
  return c;
}

// Per distinct score, descending: number of positives and negatives sharing it.
struct ScoreGroup {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

std::vector<ScoreGroup> descending_groups(std::span<const double> scores,
                                          std::span<const int> labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<ScoreGroup> groups;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i == 0 || scores[order[i]] != scores[order[i - 1]]) groups.emplace_back();
    if (labels[order[i]] == 1) {
      ++groups.back().pos;
    } else {
      ++groups.back().neg;
    }
  }
  return groups;
}

}  // namespace

double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_lengths(scores, labels);
  count_classes(labels, false);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int pred = scores[i] >= threshold ? 1 : 0;
    if (pred == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  const auto counts = count_classes(labels, true);
  // Walk groups from the highest score: each positive beats every negative
  // with a strictly lower score and ties with negatives in its own group.
  // Counts are integers (times two for the half credit), so the sum is exact.
  const auto groups = descending_groups(scores, labels);
  std::size_t neg_below = counts.neg;
  unsigned long long twice_wins = 0;
  for (const auto& g : groups) {
    neg_below -= g.neg;
    twice_wins += 2ULL * g.pos * neg_below + 1ULL * g.pos * g.neg;
  }
  return static_cast<double>(twice_wins) /
         (2.0 * static_cast<double>(counts.pos) * static_cast<double>(counts.neg));
}

double ks(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  const auto counts = count_classes(labels, true);
  const auto groups = descending_groups(scores, labels);
  std::size_t tp = 0, fp = 0;
  double best = 0.0;
  for (const auto& g : groups) {
    tp += g.pos;
    fp += g.neg;
    const double gap = std::abs(static_cast<double>(tp) / static_cast<double>(counts.pos) -
                                static_cast<double>(fp) / static_cast<double>(counts.neg));
    best = std::max(best, gap);
  }
  return best;
}

RocCurve roc_points(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  const auto counts = count_classes(labels, true);
  const auto groups = descending_groups(scores, labels);
  RocCurve curve;
  curve.reserve(groups.size() + 1);
  curve.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (const auto& g : groups) {
    tp += g.pos;
    fp += g.neg;
    curve.push_back({static_cast<double>(fp) / static_cast<double>(counts.neg),
                     static_cast<double>(tp) / static_cast<double>(counts.pos)});
  }
  // The last group always lands on (1,1).
  return curve;
}

double roc_area(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
  }
  return area;
}

MetricsRecord evaluate_metrics(std::span<const double> scores, std::span<const int> labels,
                               double threshold) {
  MetricsRecord r;
  r.acc = accuracy(scores, labels, threshold);
  r.auc = auc(scores, labels);
  r.ks = ks(scores, labels);
  const auto counts = count_classes(labels, true);
  r.n_pos = counts.pos;
  r.n_neg = counts.neg;
  return r;
}

}  // namespace credtx
