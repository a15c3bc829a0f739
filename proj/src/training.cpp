#include "credtx/training.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <limits>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "credtx/errors.hpp"
#include "credtx/io.hpp"

namespace credtx {

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

std::string_view optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be finite and positive");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in (0,1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(pos_weight > 0.0) || !std::isfinite(pos_weight)) throw ConfigError("pos_weight must be positive");
  if (early_stop) {
    if (early_stop->metric != "val_auc" && early_stop->metric != "val_loss") {
      throw ConfigError("early_stop metric must be val_auc or val_loss");
    }
    if (early_stop->patience < 1) throw ConfigError("early_stop patience must be >= 1");
  }
}

// ---------------------------------------------------------------------------

LossResult bce_loss(std::span<const double> probs, std::span<const int> labels, double pos_weight) {
  if (probs.size() != labels.size()) {
    throw DimensionError("bce_loss: " + std::to_string(probs.size()) + " probabilities vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (probs.empty()) throw DimensionError("bce_loss: empty batch");
  const double inv_n = 1.0 / static_cast<double>(probs.size());
  LossResult r{0.0, std::vector<double>(probs.size(), 0.0)};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!std::isfinite(p)) throw NumericError("bce_loss: non-finite probability");
    const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    const bool inside = p >= kProbClamp && p <= 1.0 - kProbClamp;
    if (labels[i] == 1) {
      r.loss -= pos_weight * std::log(pc);
      if (inside) r.grad[i] = -pos_weight / pc * inv_n;
    } else {
      r.loss -= std::log1p(-pc);
      if (inside) r.grad[i] = 1.0 / (1.0 - pc) * inv_n;
    }
  }
  r.loss *= inv_n;
  return r;
}

// ---------------------------------------------------------------------------

namespace {

void require_finite_grads(std::span<const Parameter> params) {
  for (const auto& p : params) {
    if (!p.grad.all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
}

}  // namespace

void sgd_step(std::span<Parameter> params, double lr) {
  require_finite_grads(params);
  for (auto& p : params) {
    double* v = p.value.ptr();
    const double* g = p.grad.ptr();
    for (std::size_t i = 0; i < p.value.size(); ++i) v[i] -= lr * g[i];
  }
}

void adam_step(std::span<Parameter> params, double lr, AdamState& state, double beta1,
               double beta2, double eps) {
  require_finite_grads(params);
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
  }
  if (state.m.size() != params.size()) throw StateError("adam state does not match parameter set");
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    double* v = params[k].value.ptr();
    const double* g = params[k].grad.ptr();
    double* m1 = state.m[k].ptr();
    double* m2 = state.v[k].ptr();
    for (std::size_t i = 0; i < params[k].value.size(); ++i) {
      m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
      m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
      const double m_hat = m1[i] / bc1;
      const double v_hat = m2[i] / bc2;
      v[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------

std::vector<double> predict_frame(const CreditModel& model, const ParamStore& params,
                                  const FeatureFrame& frame) {
  return model.predict(params, frame.x);
}

MetricsRecord evaluate_frame(const CreditModel& model, const ParamStore& params,
                             const FeatureFrame& frame, double threshold) {
  const auto probs = predict_frame(model, params, frame);
  return evaluate_metrics(probs, frame.y, threshold);
}

namespace {

void require_prepared(const FeatureFrame& f, const char* which) {
  if (!f.standardized || !f.stats) {
    throw ConfigError(std::string(which) + " split is not standardized");
  }
  if (f.stats->fitted_on != SplitTag::train) {
    throw LeakageError(std::string(which) + " split was standardized with statistics not fitted on train");
  }
  if (f.missing_count() > 0) throw DataError(std::string(which) + " split still has missing cells");
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t f = x.dim(1);
  Tensor out({idx.size(), f});
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(x.ptr() + idx[i] * f, f, out.ptr() + i * f);
  return out;
}

std::size_t count_correct(std::span<const double> probs, std::span<const int> labels, double thr) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) n += ((probs[i] >= thr ? 1 : 0) == labels[i]);
  return n;
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const SplitFrames& data) {
  cfg.validate();
  require_prepared(data.train, "train");
  require_prepared(data.val, "val");
  require_prepared(data.test, "test");
  const auto started = std::chrono::steady_clock::now();

  const std::size_t n_features = data.train.features();
  const CreditModel model(model_cfg, n_features);
  TrainResult result{init_params(model_cfg, n_features, model_cfg.seed), RunReport{}};
  ParamStore& params = result.params;
  RunReport& report = result.report;
  report.config_hash = config_hash(model_cfg, cfg);
  report.variant = std::string(variant_name(model_cfg.variant));

  AdamState adam;
  std::mt19937_64 rng(cfg.seed);
  const std::size_t n = data.train.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::optional<ParamStore> best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor xb = gather_rows(data.train.x, idx);
      std::vector<int> yb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = data.train.y[idx[i]];

      try {
        params.zero_grads();
        auto fwd = model.forward(params, xb);
        const auto loss = bce_loss(fwd.trace.probs, yb, cfg.pos_weight);
        if (!std::isfinite(loss.loss)) throw NumericError("loss is not finite");
        model.backward(params, fwd.trace, loss.grad);
        if (cfg.optimizer == OptimizerKind::sgd) {
          sgd_step(params.params(), cfg.learning_rate);
        } else {
          adam_step(params.params(), cfg.learning_rate, adam, cfg.beta1, cfg.beta2, cfg.adam_eps);
        }
        loss_sum += loss.loss * static_cast<double>(idx.size());
        correct += count_correct(fwd.trace.probs, yb, cfg.threshold);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no) + ": " + e.what());
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    const auto test_probs = predict_frame(model, params, data.test);
    rec.test_loss = bce_loss(test_probs, data.test.y, cfg.pos_weight).loss;
    rec.test_acc = accuracy(test_probs, data.test.y, cfg.threshold);

    bool stop = false;
    if (cfg.early_stop) {
      const auto val_probs = predict_frame(model, params, data.val);
      rec.val_auc = auc(val_probs, data.val.y);
      const double score = cfg.early_stop->metric == "val_auc"
                               ? *rec.val_auc
                               : -bce_loss(val_probs, data.val.y, cfg.pos_weight).loss;
      if (score > best_score) {
        best_score = score;
        best = params;
        report.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.early_stop->patience) {
        stop = true;
      }
    } else {
      report.best_epoch = epoch;
    }
    report.curves.push_back(rec);
    report.epochs_run = epoch;
    if (stop) break;
  }
  if (best) params = std::move(*best);

  report.final.train = evaluate_frame(model, params, data.train, cfg.threshold);
  report.final.val = evaluate_frame(model, params, data.val, cfg.threshold);
  report.final.test = evaluate_frame(model, params, data.test, cfg.threshold);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// ---------------------------------------------------------------------------

namespace {

SweepRow run_row(std::string label, const ModelConfig& m, const TrainConfig& t,
                 const SplitFrames& data) {
  SweepRow row;
  row.label = std::move(label);
  row.variant = std::string(variant_name(m.variant));
  row.optimizer = std::string(optimizer_name(t.optimizer));
  row.learning_rate = t.learning_rate;
  try {
    row.config_hash = config_hash(m, t);
    const auto r = train(m, t, data);
    row.val = r.report.final.val;
    row.test = r.report.final.test;
  } catch (const Error& e) {
    row.ok = false;
    row.error = e.what();
  }
  return row;
}

std::string lr_label(double lr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", lr);
  return buf;
}

}  // namespace

SweepTable sweep_lr(const ModelConfig& model_cfg, const TrainConfig& base,
                    std::span<const double> lrs, const SplitFrames& data) {
  if (lrs.empty()) throw ConfigError("sweep_lr needs at least one learning rate");
  SweepTable table{"sweep-lr", {}};
  for (double lr : lrs) {
    TrainConfig t = base;
    t.learning_rate = lr;
    table.rows.push_back(run_row(lr_label(lr), model_cfg, t, data));
  }
  return table;
}

SweepTable sweep_optimizer(const ModelConfig& model_cfg, const TrainConfig& base,
                           std::span<const OptimizerKind> optimizers,
                           std::span<const double> lrs, const SplitFrames& data) {
  if (optimizers.empty() || lrs.empty()) throw ConfigError("sweep_optimizer needs optimizers and learning rates");
  SweepTable table{"sweep-opt", {}};
  for (auto opt : optimizers) {
    for (double lr : lrs) {
      TrainConfig t = base;
      t.optimizer = opt;
      t.learning_rate = lr;
      table.rows.push_back(
          run_row(std::string(optimizer_name(opt)) + "@" + lr_label(lr), model_cfg, t, data));
    }
  }
  return table;
}

SweepTable ablate(const ModelConfig& base, const TrainConfig& train_cfg, const SplitFrames& data) {
  SweepTable table{"ablate", {}};
  for (auto v : {ModelVariant::cnn_only, ModelVariant::transformer_only, ModelVariant::hybrid}) {
    ModelConfig m = base;
    m.variant = v;
    table.rows.push_back(run_row(std::string(variant_name(v)), m, train_cfg, data));
  }
  return table;
}

MetricsRecord train_baseline_logistic(const TrainConfig& train_cfg, const SplitFrames& data) {
  ModelConfig m;
  m.variant = ModelVariant::logistic;
  m.mlp_hidden.clear();
  return train(m, train_cfg, data).report.final.test;
}

}  // namespace credtx
