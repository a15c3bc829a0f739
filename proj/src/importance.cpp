#include "credtx/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "credtx/errors.hpp"
#include "credtx/metrics.hpp"

namespace credtx {

ImportanceMetric parse_importance_metric(std::string_view name) {
  if (name == "auc") return ImportanceMetric::auc;
  if (name == "acc") return ImportanceMetric::acc;
  if (name == "ks") return ImportanceMetric::ks;
  throw ConfigError("unknown importance metric '" + std::string(name) + "'");
}

std::string_view importance_metric_name(ImportanceMetric m) {
  switch (m) {
    case ImportanceMetric::auc: return "auc";
    case ImportanceMetric::acc: return "acc";
    case ImportanceMetric::ks: return "ks";
  }
  return "auc";
}

double score_metric(ImportanceMetric metric, const std::vector<double>& probs,
                    const std::vector<int>& labels, double threshold) {
  switch (metric) {
    case ImportanceMetric::auc: return auc(probs, labels);
    case ImportanceMetric::acc: return accuracy(probs, labels, threshold);
    case ImportanceMetric::ks: return ks(probs, labels);
  }
  return 0.0;
}

ImportanceEntry feature_importance(const CreditModel& model, const ParamStore& params,
                                   const FeatureFrame& frame, std::size_t feature, double baseline,
                                   const ImportanceOptions& options) {
  if (feature >= frame.features()) throw DimensionError("feature index out of range");
  const std::size_t n = frame.rows(), f = frame.features();
  ImportanceEntry entry{frame.feature_names[feature], feature, 0.0, 0.0, {}};
  Tensor shuffled = frame.x;
  std::vector<double> column(n);
  for (std::size_t rep = 0; rep < options.repeats; ++rep) {
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                      static_cast<std::uint32_t>(feature), static_cast<std::uint32_t>(rep)};
    std::mt19937_64 rng(seq);
    for (std::size_t r = 0; r < n; ++r) column[r] = frame.x(r, feature);
    std::shuffle(column.begin(), column.end(), rng);
    for (std::size_t r = 0; r < n; ++r) shuffled[r * f + feature] = column[r];
    const auto probs = model.predict(params, shuffled);
    entry.drops.push_back(baseline - score_metric(options.metric, probs, frame.y, options.threshold));
  }
  const double k = static_cast<double>(entry.drops.size());
  entry.mean_drop = std::accumulate(entry.drops.begin(), entry.drops.end(), 0.0) / k;
  if (entry.drops.size() > 1) {
    double ss = 0.0;
    for (double d : entry.drops) ss += (d - entry.mean_drop) * (d - entry.mean_drop);
    entry.std_drop = std::sqrt(ss / (k - 1.0));
  }
  return entry;
}

ImportanceReport permutation_importance(const CreditModel& model, const ParamStore& params,
                                        const FeatureFrame& frame, const ImportanceOptions& options) {
  if (options.repeats < 1) throw ConfigError("importance repeats must be >= 1");
  if (!frame.standardized) throw ConfigError("permutation importance expects a standardized frame");
  ImportanceReport report;
  report.metric = std::string(importance_metric_name(options.metric));
  report.repeats = options.repeats;
  report.seed = options.seed;
  report.baseline = score_metric(options.metric, model.predict(params, frame.x), frame.y, options.threshold);
  for (std::size_t c = 0; c < frame.features(); ++c) {
    report.entries.push_back(feature_importance(model, params, frame, c, report.baseline, options));
  }
  std::stable_sort(report.entries.begin(), report.entries.end(),
                   [](const ImportanceEntry& a, const ImportanceEntry& b) { return a.mean_drop > b.mean_drop; });
  return report;
}

}  // namespace credtx
