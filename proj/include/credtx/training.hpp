#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "credtx/data.hpp"
#include "credtx/metrics.hpp"
#include "credtx/model.hpp"

namespace credtx {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind);

struct EarlyStop {
  std::string metric = "val_auc";  // or "val_loss"
  std::size_t patience = 10;
};

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool shuffle = true;
  std::optional<EarlyStop> early_stop = EarlyStop{};
  double pos_weight = 1.0;  // weight on the positive-class term of the loss
  double threshold = 0.5;   // decision threshold for ACC

  void validate() const;
};

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbClamp = 1e-12;

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // dL/dprob per row
};

// Mean of -[w*y*ln p + (1-y)*ln(1-p)] with p clamped to [1e-12, 1-1e-12].
// The gradient is the exact derivative of the clamped expression (zero where
// the clamp is active).
LossResult bce_loss(std::span<const double> probs, std::span<const int> labels,
                    double pos_weight = 1.0);

// ---------------------------------------------------------------------------
// Optimizers. Both throw NumericError naming the parameter when a gradient
// is not finite; no parameter is modified in that case.

void sgd_step(std::span<Parameter> params, double lr);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;
};

void adam_step(std::span<Parameter> params, double lr, AdamState& state, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  std::optional<double> val_auc;
};

struct SplitMetrics {
  MetricsRecord train;
  MetricsRecord val;
  MetricsRecord test;
};

struct RunReport {
  std::string config_hash;
  std::string variant;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> curves;
  SplitMetrics final;
  double wall_clock_seconds = 0.0;  // not serialized into report.json
};

struct TrainResult {
  ParamStore params;
  RunReport report;
};

std::vector<double> predict_frame(const CreditModel& model, const ParamStore& params,
                                  const FeatureFrame& frame);
MetricsRecord evaluate_frame(const CreditModel& model, const ParamStore& params,
                             const FeatureFrame& frame, double threshold = 0.5);

// Splits must be standardized with train-fitted statistics. Throws
// NumericError (with epoch/batch) when the loss diverges.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const SplitFrames& data);

// ---------------------------------------------------------------------------
// Experiment runners

struct SweepRow {
  std::string label;
  std::string variant;
  std::string optimizer;
  double learning_rate = 0.0;
  bool ok = true;
  std::string error;
  std::string config_hash;
  MetricsRecord val;
  MetricsRecord test;
};

struct SweepTable {
  std::string kind;  // "sweep-lr", "sweep-opt", "ablate"
  std::vector<SweepRow> rows;
};

inline const std::vector<double> kLearningRateGrid{0.005, 0.003, 0.002, 0.001};

SweepTable sweep_lr(const ModelConfig& model_cfg, const TrainConfig& base,
                    std::span<const double> lrs, const SplitFrames& data);
SweepTable sweep_optimizer(const ModelConfig& model_cfg, const TrainConfig& base,
                           std::span<const OptimizerKind> optimizers,
                           std::span<const double> lrs, const SplitFrames& data);
// One run per variant of `base` in {cnn_only, transformer_only, hybrid}.
SweepTable ablate(const ModelConfig& base, const TrainConfig& train_cfg, const SplitFrames& data);

// Single linear layer + sigmoid trained with the same loop; returns test metrics.
MetricsRecord train_baseline_logistic(const TrainConfig& train_cfg, const SplitFrames& data);

}  // namespace credtx
