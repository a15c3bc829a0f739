#include "credtx/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"

#include "credtx/errors.hpp"
#include "credtx/importance.hpp"
#include "credtx/metrics.hpp"

namespace fs = std::filesystem;

namespace credtx {

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (k != "model" && k != "train" && k != "schema" && k != "split" && k != "data") {
      throw ConfigError("unknown config section '" + k + "'");
    }
  }
  RunConfig c;
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  if (j.contains("schema")) c.schema = j.at("schema").get<SchemaConfig>();
  if (j.contains("split")) c.split = j.at("split").get<SplitSpec>();
  if (j.contains("data")) {
    const auto& d = j.at("data");
    if (!d.is_object()) throw ConfigError("data section must be an object");
    for (const auto& [k, v] : d.items()) {
      try {
        if (k == "subsample") {
          c.load.subsample = v.get<std::size_t>();
        } else if (k == "subsample_seed") {
          c.load.subsample_seed = v.get<std::uint64_t>();
        } else if (k == "winsorize") {
          if (v.is_null()) {
            c.winsorize.reset();
          } else {
            const auto q = v.get<std::vector<double>>();
            if (q.size() != 2) throw ConfigError("data.winsorize must be [lower, upper]");
            c.winsorize = std::make_pair(q[0], q[1]);
          }
        } else {
          throw ConfigError("unknown key '" + k + "' in data");
        }
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("data." + k + ": " + e.what());
      }
    }
  }
  return c;
}

json run_config_json(const RunConfig& c) {
  json data{{"subsample", c.load.subsample}, {"subsample_seed", c.load.subsample_seed}, {"winsorize", nullptr}};
  if (c.winsorize) data["winsorize"] = json::array({c.winsorize->first, c.winsorize->second});
  return json{{"model", c.model}, {"train", c.train}, {"schema", c.schema}, {"split", c.split}, {"data", data}};
}

namespace {

struct Overrides {
  std::uint64_t seed = 0;
  double lr = 0.0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  std::string optimizer;
  std::string variant;
};

struct Args {
  std::string config;
  std::string data;
  std::string out;
  std::string checkpoint;
  Overrides ov;
  CLI::App* sub = nullptr;  // the subcommand that was parsed
  std::vector<double> lrs = kLearningRateGrid;
  std::vector<std::string> optimizers{"sgd", "adam"};
  std::string metric = "auc";
  std::size_t repeats = 5;
  std::uint64_t importance_seed = 0;
  std::size_t synth_n = 10000;
  std::size_t synth_features = 10;
  std::string synth_spec = "strong-single";
  std::uint64_t synth_seed = 0;
  std::vector<std::string> runs;
};

void add_common(CLI::App* sub, Args& a, bool needs_out = true) {
  sub->add_option("--config", a.config, "merged JSON config (model/train/schema/split/data)")
      ->check(CLI::ExistingFile);
  sub->add_option("--data", a.data, std::string("input CSV (default: $") + kDataDirEnv + "/cs-training.csv)");
  auto* out = sub->add_option("--out", a.out, "output directory (created if absent)");
  if (needs_out) out->required();
}

void add_overrides(CLI::App* sub, Overrides& o) {
  sub->add_option("--seed", o.seed, "seed for model init, shuffling and the split");
  sub->add_option("--lr", o.lr, "learning rate");
  sub->add_option("--epochs", o.epochs, "maximum epochs");
  sub->add_option("--batch-size", o.batch_size, "mini-batch size");
  sub->add_option("--optimizer", o.optimizer, "sgd or adam");
  sub->add_option("--variant", o.variant, "cnn_only, transformer_only, hybrid or logistic");
}

RunConfig load_config(const Args& a) {
  RunConfig c = a.config.empty() ? RunConfig{} : parse_run_config(read_json_file(a.config));
  const auto& o = a.ov;
  // Only subcommands that registered the override flags see them; the
  // --seed of importance is its shuffle seed and is handled there.
  const bool overridable = a.sub->get_option_no_throw("--lr") != nullptr;
  auto given = [&](const char* name) {
    if (!overridable) return false;
    const auto* opt = a.sub->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (given("--seed")) {
    c.model.seed = o.seed;
    c.train.seed = o.seed;
    c.split.seed = o.seed;
  }
  if (given("--lr")) c.train.learning_rate = o.lr;
  if (given("--epochs")) c.train.epochs = o.epochs;
  if (given("--batch-size")) c.train.batch_size = o.batch_size;
  if (given("--optimizer")) c.train.optimizer = parse_optimizer(o.optimizer);
  if (given("--variant")) c.model.variant = parse_variant(o.variant);
  if (c.model.variant == ModelVariant::logistic) c.model.mlp_hidden.clear();
  c.train.validate();
  return c;
}

fs::path resolve_data(const std::string& data) {
  if (!data.empty()) return data;
  const char* dir = std::getenv(kDataDirEnv);
  if (dir && *dir) return fs::path(dir) / "cs-training.csv";
  throw ConfigError(std::string("no --data given and ") + kDataDirEnv + " is not set");
}

struct Prepared {
  SplitFrames frames;
  Preprocessor pre;
  std::vector<std::string> features;
  json input;
};

json describe_input(const fs::path& p) {
  return json{{"name", p.filename().string()}, {"sha256", file_sha256(p)}};
}

Prepared prepare(const RunConfig& c, const fs::path& data) {
  const auto frame = load_csv(data, c.schema, c.load);
  const auto raw = split(frame, c.split);
  const auto pre = fit_preprocessor(raw.train, PreprocessOptions{c.schema.imputation, c.winsorize});
  return {preprocess(raw, pre), pre, frame.feature_names, describe_input(data)};
}

json manifest(const std::string& sub, const RunConfig& c, json inputs) {
  return json{{"tool", "credtx"},
              {"version", kToolVersion},
              {"subcommand", sub},
              {"config", run_config_json(c)},
              {"config_hash", config_hash(c.model, c.train)},
              {"seeds",
               {{"model", c.model.seed},
                {"train", c.train.seed},
                {"split", c.split.seed},
                {"subsample", c.load.subsample_seed}}},
              {"inputs", std::move(inputs)}};
}

fs::path make_out(const std::string& out) {
  fs::path p(out);
  fs::create_directories(p);
  return p;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4) << v;
  return ss.str();
}

void print_metrics(std::ostream& out, const std::string& label, const MetricsRecord& m) {
  out << label << ": acc=" << fmt(m.acc) << " auc=" << fmt(m.auc) << " ks=" << fmt(m.ks) << "\n";
}

// ---------------------------------------------------------------------------

int cmd_train(const Args& a, std::ostream& out) {
  const RunConfig c = load_config(a);
  const fs::path data = resolve_data(a.data);
  const auto prep = prepare(c, data);
  const auto result = train(c.model, c.train, prep.frames);
  const fs::path dir = make_out(a.out);

  write_json_file(dir / "report.json", json(result.report));
  write_text_file(dir / "curves.csv", curves_csv(result.report));
  save_checkpoint(dir / "checkpoint.bin", Checkpoint{c.model, prep.features, prep.pre, result.params});
  write_json_file(dir / "manifest.json", manifest("train", c, json::array({prep.input})));
  write_json_file(dir / "timing.json", json{{"wall_clock_seconds", result.report.wall_clock_seconds}});

  out << "variant " << result.report.variant << ", " << result.report.epochs_run << " epochs (best "
      << result.report.best_epoch << ")\n";
  print_metrics(out, "val", result.report.final.val);
  print_metrics(out, "test", result.report.final.test);
  return kExitOk;
}

// Rows of a checkpoint-compatible frame: schema columns forced to the
// checkpoint's feature order, preprocessed with its train-fitted statistics.
FeatureFrame load_for_checkpoint(const RunConfig& c, const Checkpoint& ck, const fs::path& data) {
  SchemaConfig schema = c.schema;
  schema.feature_columns = ck.feature_names;
  schema.ignore_columns.clear();
  const auto frame = load_csv(data, schema, c.load);
  if (!ck.preprocessor) throw DataError("checkpoint carries no preprocessing statistics");
  return ck.preprocessor->apply(frame);
}

int cmd_eval(const Args& a, std::ostream& out) {
  const RunConfig c = load_config(a);
  const fs::path data = resolve_data(a.data);
  const auto ck = load_checkpoint(a.checkpoint);
  const auto frame = load_for_checkpoint(c, ck, data);
  const CreditModel model(ck.config, ck.feature_names.size());
  const auto m = evaluate_frame(model, ck.params, frame, c.train.threshold);
  const fs::path dir = make_out(a.out);
  write_json_file(dir / "report.json", json{{"rows", frame.rows()}, {"metrics", m}});
  write_json_file(dir / "manifest.json",
                  manifest("eval", c, json::array({describe_input(data), describe_input(a.checkpoint)})));
  print_metrics(out, "eval", m);
  return kExitOk;
}

int write_table(const std::string& sub, const RunConfig& c, const Prepared& prep, const SweepTable& t,
                const std::string& out_dir, std::ostream& out) {
  const fs::path dir = make_out(out_dir);
  write_json_file(dir / "report.json", json(t));
  write_text_file(dir / (t.kind + ".csv"), sweep_csv(t));
  write_json_file(dir / "manifest.json", manifest(sub, c, json::array({prep.input})));
  out << std::left << std::setw(22) << "run" << std::setw(8) << "acc" << std::setw(8) << "auc" << "ks\n";
  for (const auto& r : t.rows) {
    out << std::setw(22) << r.label;
    if (r.ok) {
      out << std::setw(8) << fmt(r.test.acc) << std::setw(8) << fmt(r.test.auc) << fmt(r.test.ks) << "\n";
    } else {
      out << "failed: " << r.error << "\n";
    }
  }
  return kExitOk;
}

int cmd_sweep_lr(const Args& a, std::ostream& out) {
  const RunConfig c = load_config(a);
  const auto prep = prepare(c, resolve_data(a.data));
  return write_table("sweep-lr", c, prep, sweep_lr(c.model, c.train, a.lrs, prep.frames), a.out, out);
}

int cmd_sweep_opt(const Args& a, std::ostream& out) {
  const RunConfig c = load_config(a);
  std::vector<OptimizerKind> opts;
  for (const auto& o : a.optimizers) opts.push_back(parse_optimizer(o));
  const auto prep = prepare(c, resolve_data(a.data));
  return write_table("sweep-opt", c, prep, sweep_optimizer(c.model, c.train, opts, a.lrs, prep.frames), a.out,
                     out);
}

int cmd_ablate(const Args& a, std::ostream& out) {
  const RunConfig c = load_config(a);
  const auto prep = prepare(c, resolve_data(a.data));
  return write_table("ablate", c, prep, ablate(c.model, c.train, prep.frames), a.out, out);
}

int cmd_importance(const Args& a, std::ostream& out) {
  const RunConfig c = load_config(a);
  const fs::path data = resolve_data(a.data);
  const auto ck = load_checkpoint(a.checkpoint);
  SchemaConfig schema = c.schema;
  schema.feature_columns = ck.feature_names;
  schema.ignore_columns.clear();
  const auto frame = load_csv(data, schema, c.load);
  // Same partition as training; permutations stay inside the test split.
  const auto idx = split_indices(frame.y, c.split);
  if (!ck.preprocessor) throw DataError("checkpoint carries no preprocessing statistics");
  const auto test = ck.preprocessor->apply(frame.select_rows(idx.test, SplitTag::test));

  ImportanceOptions opt;
  opt.metric = parse_importance_metric(a.metric);
  opt.repeats = a.repeats;
  opt.seed = a.importance_seed;
  opt.threshold = c.train.threshold;
  const CreditModel model(ck.config, ck.feature_names.size());
  const auto rep = permutation_importance(model, ck.params, test, opt);

  const fs::path dir = make_out(a.out);
  write_json_file(dir / "report.json", json(rep));
  write_text_file(dir / "importance.csv", importance_csv(rep));
  write_json_file(dir / "manifest.json",
                  manifest("importance", c, json::array({describe_input(data), describe_input(a.checkpoint)})));
  out << "baseline " << rep.metric << " " << fmt(rep.baseline) << "\n";
  for (const auto& e : rep.entries) out << "  " << std::left << std::setw(40) << e.feature << fmt(e.mean_drop) << "\n";
  return kExitOk;
}

int cmd_synth(const Args& a, std::ostream& out) {
  const auto spec = synth_preset(a.synth_spec, a.synth_features);
  const auto data = synth_generate(a.synth_n, a.synth_features, a.synth_seed, spec);
  const fs::path path(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_csv(data.frame, path);
  const double bayes = auc(data.bayes_logits, data.frame.y);
  json m{{"tool", "credtx"},
         {"version", kToolVersion},
         {"subcommand", "synth"},
         {"n", a.synth_n},
         {"features", a.synth_features},
         {"seed", a.synth_seed},
         {"spec", spec},
         {"positive_rate", data.frame.positive_rate()},
         {"bayes_auc", bayes},
         {"output", describe_input(path)}};
  write_json_file(path.string() + ".manifest.json", m);
  out << "wrote " << a.synth_n << " rows to " << path.string() << " (bayes auc " << fmt(bayes) << ")\n";
  return kExitOk;
}

int cmd_report(const Args& a, std::ostream& out) {
  std::ostringstream csv;
  csv << "run,label,acc,auc,ks\n";
  out << std::left << std::setw(30) << "run" << std::setw(22) << "label" << std::setw(8) << "acc"
      << std::setw(8) << "auc" << "ks\n";
  auto emit = [&](const std::string& run, const std::string& label, const json& m) {
    const double acc = m.at("acc").get<double>(), au = m.at("auc").get<double>(), k = m.at("ks").get<double>();
    out << std::setw(30) << run << std::setw(22) << label << std::setw(8) << fmt(acc) << std::setw(8) << fmt(au)
        << fmt(k) << "\n";
    csv << run << "," << label << "," << acc << "," << au << "," << k << "\n";
  };
  for (const auto& r : a.runs) {
    fs::path p(r);
    if (fs::is_directory(p)) p /= "report.json";
    if (!fs::exists(p)) throw DataError("no report at '" + p.string() + "'");
    const json j = read_json_file(p);
    const std::string run = p.parent_path().filename().string();
    if (j.contains("final")) {
      emit(run, j.at("variant").get<std::string>(), j.at("final").at("test"));
    } else if (j.contains("rows")) {
      if (j.at("rows").is_array()) {
        for (const auto& row : j.at("rows")) {
          if (row.at("ok").get<bool>()) emit(run, row.at("label").get<std::string>(), row.at("test"));
        }
      } else {
        emit(run, "eval", j.at("metrics"));
      }
    } else {
      throw DataError("'" + p.string() + "' is not a train, eval, sweep or ablation report");
    }
  }
  if (!a.out.empty()) write_text_file(a.out, csv.str());
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"credtx: hybrid CNN + Transformer credit default prediction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Args a;

  auto* train_cmd = app.add_subcommand("train", "train one model and write report, curves and checkpoint");
  add_common(train_cmd, a);
  add_overrides(train_cmd, a.ov);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a CSV");
  add_common(eval_cmd, a);
  eval_cmd->add_option("--checkpoint", a.checkpoint, "checkpoint.bin from train")->required()->check(CLI::ExistingFile);

  auto* lr_cmd = app.add_subcommand("sweep-lr", "one run per learning rate");
  add_common(lr_cmd, a);
  add_overrides(lr_cmd, a.ov);
  lr_cmd->add_option("--lrs", a.lrs, "learning rates")->delimiter(',');

  auto* opt_cmd = app.add_subcommand("sweep-opt", "optimizer x learning-rate grid");
  add_common(opt_cmd, a);
  add_overrides(opt_cmd, a.ov);
  opt_cmd->add_option("--lrs", a.lrs, "learning rates")->delimiter(',');
  opt_cmd->add_option("--optimizers", a.optimizers, "optimizers")->delimiter(',');

  auto* abl_cmd = app.add_subcommand("ablate", "cnn_only, transformer_only and hybrid on the same split");
  add_common(abl_cmd, a);
  add_overrides(abl_cmd, a.ov);

  auto* imp_cmd = app.add_subcommand("importance", "permutation importance of a checkpoint on the test split");
  add_common(imp_cmd, a);
  imp_cmd->add_option("--checkpoint", a.checkpoint, "checkpoint.bin from train")->required()->check(CLI::ExistingFile);
  imp_cmd->add_option("--metric", a.metric, "auc, acc or ks");
  imp_cmd->add_option("--repeats", a.repeats, "shuffles per feature");
  imp_cmd->add_option("--seed", a.importance_seed, "shuffle seed");

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset with known Bayes scores");
  synth_cmd->add_option("--n", a.synth_n, "rows");
  synth_cmd->add_option("--features", a.synth_features, "feature count");
  synth_cmd->add_option("--spec", a.synth_spec, "noise, strong-single, linear, xor, long-range, local-long");
  synth_cmd->add_option("--seed", a.synth_seed, "generator seed");
  synth_cmd->add_option("--out", a.out, "output CSV path")->required();

  auto* report_cmd = app.add_subcommand("report", "tabulate report.json files");
  report_cmd->add_option("--runs", a.runs, "run directories or report.json files")->required();
  report_cmd->add_option("--out", a.out, "optional CSV path for the table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (auto* s : app.get_subcommands()) a.sub = s;

  try {
    if (train_cmd->parsed()) return cmd_train(a, out);
    if (eval_cmd->parsed()) return cmd_eval(a, out);
    if (lr_cmd->parsed()) return cmd_sweep_lr(a, out);
    if (opt_cmd->parsed()) return cmd_sweep_opt(a, out);
    if (abl_cmd->parsed()) return cmd_ablate(a, out);
    if (imp_cmd->parsed()) return cmd_importance(a, out);
    if (synth_cmd->parsed()) return cmd_synth(a, out);
    if (report_cmd->parsed()) return cmd_report(a, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << "\n";
    return kExitData;
  } catch (const UndefinedMetricError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DimensionError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace credtx
