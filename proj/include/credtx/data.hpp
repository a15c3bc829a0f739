#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "credtx/tensor.hpp"

namespace credtx {

// Which partition a frame (or a statistic fitted on it) belongs to.
enum class SplitTag { full, train, val, test };

std::string_view split_tag_name(SplitTag tag);

struct ImputationPolicy {
  enum class Kind { median, mean, constant };
  Kind kind = Kind::median;
  double constant = 0.0;

  static ImputationPolicy parse(std::string_view text);  // "median", "mean", "constant(0.5)"
  std::string str() const;
};

struct SchemaConfig {
  std::string label_column = "label";
  // Empty means "every column except the label and ignored columns".
  std::vector<std::string> feature_columns;
  std::vector<std::string> ignore_columns;
  std::vector<std::string> missing_markers{"", "NA"};
  ImputationPolicy imputation;

  void validate() const;
};

struct StandardizeStats {
  std::vector<double> mean;
  std::vector<double> std;
  SplitTag fitted_on = SplitTag::train;
};

struct ImputeStats {
  ImputationPolicy policy;
  std::vector<double> fill;
  SplitTag fitted_on = SplitTag::train;
};

struct WinsorizeStats {
  std::vector<double> lower;
  std::vector<double> upper;
  SplitTag fitted_on = SplitTag::train;
};

struct FeatureFrame {
  std::vector<std::string> feature_names;
  Tensor x;                           // [n_rows, n_features]
  std::vector<int> y;                 // 0 = repaid, 1 = default
  std::vector<std::uint8_t> missing;  // row-major mask; empty when nothing is missing
  SplitTag split = SplitTag::full;
  bool standardized = false;
  std::optional<StandardizeStats> stats;

  std::size_t rows() const noexcept { return y.size(); }
  std::size_t features() const noexcept { return feature_names.size(); }
  std::size_t missing_count() const noexcept;
  std::vector<std::size_t> missing_per_column() const;
  double positive_rate() const noexcept;

  FeatureFrame select_rows(std::span<const std::size_t> rows, SplitTag tag) const;
  // Checks the row/label/mask invariants; throws DataError.
  void validate() const;
};

struct LoadOptions {
  std::size_t subsample = 0;  // 0 keeps every row
  std::uint64_t subsample_seed = 0;
};

// Parses a comma-separated file with a header row. Cells equal to a missing
// marker are recorded in FeatureFrame::missing (value left at 0).
FeatureFrame load_csv(const std::filesystem::path& path, const SchemaConfig& schema,
                      const LoadOptions& options = {});
FeatureFrame parse_csv(std::string_view text, const SchemaConfig& schema,
                       const LoadOptions& options = {});

void write_csv(const FeatureFrame& frame, const std::filesystem::path& path,
               const std::string& label_column = "label");

// Imputation statistics may only be fitted on a train-tagged frame and only
// applied when they carry the train tag.
ImputeStats impute_fit(const FeatureFrame& frame, const ImputationPolicy& policy);
FeatureFrame impute_apply(const FeatureFrame& frame, const ImputeStats& stats);
FeatureFrame impute(const FeatureFrame& train, const SchemaConfig& schema);

StandardizeStats standardize_fit(const FeatureFrame& frame);
FeatureFrame standardize_apply(const FeatureFrame& frame, const StandardizeStats& stats);

WinsorizeStats winsorize_fit(const FeatureFrame& frame, double lower_q, double upper_q);
FeatureFrame winsorize_apply(const FeatureFrame& frame, const WinsorizeStats& stats);

struct SplitSpec {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 7;
  bool stratified = true;

  void validate() const;
};

struct SplitFrames {
  FeatureFrame train;
  FeatureFrame val;
  FeatureFrame test;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

SplitIndices split_indices(std::span<const int> labels, const SplitSpec& spec);
SplitFrames split(const FeatureFrame& frame, const SplitSpec& spec);

struct PreprocessOptions {
  ImputationPolicy imputation;
  std::optional<std::pair<double, double>> winsorize;  // quantiles, off by default
};

struct Preprocessor {
  ImputeStats impute;
  std::optional<WinsorizeStats> winsorize;
  StandardizeStats standardize;

  FeatureFrame apply(const FeatureFrame& frame) const;
};

// Fits every statistic on splits.train and applies it to all three splits.
Preprocessor fit_preprocessor(const FeatureFrame& train, const PreprocessOptions& options);
SplitFrames preprocess(const SplitFrames& raw, const Preprocessor& pre);

// ---------------------------------------------------------------------------
// Synthetic credit-like data with known generative logits.
//   logit = bias + w.x + sum_pairs coef * x[a] * x[b]
//           + motif.coef * sum_{t=start}^{start+width-2} x[t] * x[t+1]

struct SynthSpec {
  std::string name = "custom";
  std::vector<double> weights;  // zero-padded to n_features
  double bias = 0.0;
  struct Pair {
    std::size_t a = 0;
    std::size_t b = 0;
    double coef = 0.0;
  };
  std::vector<Pair> pairs;
  struct Motif {
    std::size_t start = 0;
    std::size_t width = 3;
    double coef = 0.0;
  };
  std::optional<Motif> motif;
};

// Named generators: noise, strong-single, linear, xor, long-range, local-long.
SynthSpec synth_preset(std::string_view name, std::size_t n_features);
std::vector<std::string> synth_preset_names();

struct SynthData {
  FeatureFrame frame;
  std::vector<double> bayes_logits;
};

SynthData synth_generate(std::size_t n, std::size_t n_features, std::uint64_t seed,
                         const SynthSpec& spec);

double synth_logit(const SynthSpec& spec, std::span<const double> row);

}  // namespace credtx
