#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "credtx/data.hpp"
#include "credtx/model.hpp"

namespace credtx {

enum class ImportanceMetric { auc, acc, ks };

ImportanceMetric parse_importance_metric(std::string_view name);
std::string_view importance_metric_name(ImportanceMetric m);

struct ImportanceOptions {
  ImportanceMetric metric = ImportanceMetric::auc;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  double threshold = 0.5;  // for ACC
};

struct ImportanceEntry {
  std::string feature;
  std::size_t index = 0;
  double mean_drop = 0.0;
  double std_drop = 0.0;  // sample std over repeats (0 with one repeat)
  std::vector<double> drops;
};

struct ImportanceReport {
  std::string metric;
  double baseline = 0.0;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  // Sorted by mean_drop descending; ties keep feature order.
  std::vector<ImportanceEntry> entries;
};

double score_metric(ImportanceMetric metric, const std::vector<double>& probs,
                    const std::vector<int>& labels, double threshold);

// Metric drop from shuffling one column of `frame`, averaged over repeats.
// The shuffle for (feature, repeat) depends only on (seed, feature, repeat).
ImportanceEntry feature_importance(const CreditModel& model, const ParamStore& params,
                                   const FeatureFrame& frame, std::size_t feature, double baseline,
                                   const ImportanceOptions& options);

ImportanceReport permutation_importance(const CreditModel& model, const ParamStore& params,
                                        const FeatureFrame& frame,
                                        const ImportanceOptions& options = {});

}  // namespace credtx
