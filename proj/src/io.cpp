#include "credtx/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "credtx/errors.hpp"

namespace credtx {

namespace {

void require_object(const json& j, const char* what, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items()) {
    if (!keys.contains(k)) throw ConfigError("unknown key '" + k + "' in " + what);
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out, const char* what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(what) + "." + key + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void to_json(json& j, const ModelConfig& c) {
  j = json{{"variant", variant_name(c.variant)},
           {"d_embed", c.d_embed},
           {"conv",
            {{"channels", c.conv.channels},
             {"kernel", c.conv.kernel},
             {"stride", c.conv.stride},
             {"pool_window", c.conv.pool_window},
             {"pool_stride", c.conv.pool_stride}}},
           {"attn",
            {{"n_heads", c.attn.n_heads},
             {"d_model", c.attn.d_model},
             {"n_blocks", c.attn.n_blocks},
             {"layer_norm", c.attn.layer_norm}}},
           {"ffn_dim", c.ffn_dim},
           {"mlp_hidden", c.mlp_hidden},
           {"activation", activation_name(c.activation)},
           {"ln_eps", c.ln_eps},
           {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
  require_object(j, "model", {"variant", "d_embed", "conv", "attn", "ffn_dim", "mlp_hidden",
                              "activation", "ln_eps", "seed"});
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  read_opt(j, "d_embed", c.d_embed, "model");
  if (j.contains("conv")) {
    const auto& k = j.at("conv");
    require_object(k, "model.conv", {"channels", "kernel", "stride", "pool_window", "pool_stride"});
    read_opt(k, "channels", c.conv.channels, "model.conv");
    read_opt(k, "kernel", c.conv.kernel, "model.conv");
    read_opt(k, "stride", c.conv.stride, "model.conv");
    read_opt(k, "pool_window", c.conv.pool_window, "model.conv");
    read_opt(k, "pool_stride", c.conv.pool_stride, "model.conv");
  }
  if (j.contains("attn")) {
    const auto& a = j.at("attn");
    require_object(a, "model.attn", {"n_heads", "d_model", "n_blocks", "layer_norm"});
    read_opt(a, "n_heads", c.attn.n_heads, "model.attn");
    read_opt(a, "d_model", c.attn.d_model, "model.attn");
    read_opt(a, "n_blocks", c.attn.n_blocks, "model.attn");
    read_opt(a, "layer_norm", c.attn.layer_norm, "model.attn");
  }
  read_opt(j, "ffn_dim", c.ffn_dim, "model");
  read_opt(j, "mlp_hidden", c.mlp_hidden, "model");
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
  read_opt(j, "ln_eps", c.ln_eps, "model");
  read_opt(j, "seed", c.seed, "model");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"optimizer", optimizer_name(c.optimizer)},
           {"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"seed", c.seed},
           {"adam", {{"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.adam_eps}}},
           {"shuffle", c.shuffle},
           {"early_stop", nullptr},
           {"pos_weight", c.pos_weight},
           {"threshold", c.threshold}};
  if (c.early_stop) {
    j["early_stop"] = json{{"metric", c.early_stop->metric}, {"patience", c.early_stop->patience}};
  }
}

void from_json(const json& j, TrainConfig& c) {
  require_object(j, "train", {"optimizer", "learning_rate", "batch_size", "epochs", "seed", "adam",
                              "shuffle", "early_stop", "pos_weight", "threshold"});
  if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  read_opt(j, "learning_rate", c.learning_rate, "train");
  read_opt(j, "batch_size", c.batch_size, "train");
  read_opt(j, "epochs", c.epochs, "train");
  read_opt(j, "seed", c.seed, "train");
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    require_object(a, "train.adam", {"beta1", "beta2", "eps"});
    read_opt(a, "beta1", c.beta1, "train.adam");
    read_opt(a, "beta2", c.beta2, "train.adam");
    read_opt(a, "eps", c.adam_eps, "train.adam");
  }
  read_opt(j, "shuffle", c.shuffle, "train");
  if (j.contains("early_stop")) {
    const auto& e = j.at("early_stop");
    if (e.is_null()) {
      c.early_stop.reset();
    } else {
      require_object(e, "train.early_stop", {"metric", "patience"});
      EarlyStop es;
      read_opt(e, "metric", es.metric, "train.early_stop");
      read_opt(e, "patience", es.patience, "train.early_stop");
      c.early_stop = es;
    }
  }
  read_opt(j, "pos_weight", c.pos_weight, "train");
  read_opt(j, "threshold", c.threshold, "train");
}

void to_json(json& j, const SchemaConfig& c) {
  j = json{{"label_column", c.label_column},
           {"feature_columns", c.feature_columns},
           {"ignore_columns", c.ignore_columns},
           {"missing_markers", c.missing_markers},
           {"imputation", c.imputation.str()}};
}

void from_json(const json& j, SchemaConfig& c) {
  require_object(j, "schema", {"label_column", "feature_columns", "ignore_columns", "missing_markers",
                               "imputation"});
  read_opt(j, "label_column", c.label_column, "schema");
  read_opt(j, "feature_columns", c.feature_columns, "schema");
  read_opt(j, "ignore_columns", c.ignore_columns, "schema");
  read_opt(j, "missing_markers", c.missing_markers, "schema");
  if (j.contains("imputation")) c.imputation = ImputationPolicy::parse(j.at("imputation").get<std::string>());
  c.validate();
}

void to_json(json& j, const SplitSpec& c) {
  j = json{{"train", c.train}, {"val", c.val}, {"test", c.test}, {"seed", c.seed},
           {"stratified", c.stratified}};
}

void from_json(const json& j, SplitSpec& c) {
  require_object(j, "split", {"train", "val", "test", "seed", "stratified"});
  read_opt(j, "train", c.train, "split");
  read_opt(j, "val", c.val, "split");
  read_opt(j, "test", c.test, "split");
  read_opt(j, "seed", c.seed, "split");
  read_opt(j, "stratified", c.stratified, "split");
  c.validate();
}

void to_json(json& j, const SynthSpec& s) {
  json pairs = json::array();
  for (const auto& p : s.pairs) pairs.push_back(json{{"a", p.a}, {"b", p.b}, {"coef", p.coef}});
  j = json{{"name", s.name}, {"weights", s.weights}, {"bias", s.bias}, {"pairs", pairs}, {"motif", nullptr}};
  if (s.motif) {
    j["motif"] = json{{"start", s.motif->start}, {"width", s.motif->width}, {"coef", s.motif->coef}};
  }
}

void from_json(const json& j, SynthSpec& s) {
  require_object(j, "synth", {"name", "weights", "bias", "pairs", "motif"});
  read_opt(j, "name", s.name, "synth");
  read_opt(j, "weights", s.weights, "synth");
  read_opt(j, "bias", s.bias, "synth");
  if (j.contains("pairs")) {
    s.pairs.clear();
    for (const auto& p : j.at("pairs")) {
      s.pairs.push_back({p.at("a").get<std::size_t>(), p.at("b").get<std::size_t>(), p.at("coef").get<double>()});
    }
  }
  if (j.contains("motif") && !j.at("motif").is_null()) {
    const auto& m = j.at("motif");
    s.motif = SynthSpec::Motif{m.at("start").get<std::size_t>(), m.at("width").get<std::size_t>(),
                               m.at("coef").get<double>()};
  }
}

void to_json(json& j, const Preprocessor& p) {
  j = json{{"fitted_on", split_tag_name(p.standardize.fitted_on)},
           {"imputation", p.impute.policy.str()},
           {"impute_fill", p.impute.fill},
           {"winsorize", nullptr},
           {"mean", p.standardize.mean},
           {"std", p.standardize.std}};
  if (p.winsorize) j["winsorize"] = json{{"lower", p.winsorize->lower}, {"upper", p.winsorize->upper}};
}

void from_json(const json& j, Preprocessor& p) {
  const auto tag = j.at("fitted_on").get<std::string>();
  if (tag != "train") throw LeakageError("stored preprocessing statistics were fitted on '" + tag + "'");
  p.impute.policy = ImputationPolicy::parse(j.at("imputation").get<std::string>());
  p.impute.fill = j.at("impute_fill").get<std::vector<double>>();
  p.impute.fitted_on = SplitTag::train;
  if (!j.at("winsorize").is_null()) {
    p.winsorize = WinsorizeStats{j.at("winsorize").at("lower").get<std::vector<double>>(),
                                 j.at("winsorize").at("upper").get<std::vector<double>>(), SplitTag::train};
  }
  p.standardize.mean = j.at("mean").get<std::vector<double>>();
  p.standardize.std = j.at("std").get<std::vector<double>>();
  p.standardize.fitted_on = SplitTag::train;
}

void to_json(json& j, const MetricsRecord& m) {
  j = json{{"acc", m.acc}, {"auc", m.auc}, {"ks", m.ks}, {"n_pos", m.n_pos}, {"n_neg", m.n_neg}};
}

void from_json(const json& j, MetricsRecord& m) {
  m.acc = j.at("acc").get<double>();
  m.auc = j.at("auc").get<double>();
  m.ks = j.at("ks").get<double>();
  m.n_pos = j.at("n_pos").get<std::size_t>();
  m.n_neg = j.at("n_neg").get<std::size_t>();
}

void to_json(json& j, const EpochRecord& e) {
  j = json{{"epoch", e.epoch},         {"train_loss", e.train_loss}, {"train_acc", e.train_acc},
           {"test_loss", e.test_loss}, {"test_acc", e.test_acc},     {"val_auc", nullptr}};
  if (e.val_auc) j["val_auc"] = *e.val_auc;
}

void to_json(json& j, const RunReport& r) {
  j = json{{"config_hash", r.config_hash},
           {"variant", r.variant},
           {"epochs_run", r.epochs_run},
           {"best_epoch", r.best_epoch},
           {"final", {{"train", r.final.train}, {"val", r.final.val}, {"test", r.final.test}}},
           {"curves", r.curves}};
}

void to_json(json& j, const SweepRow& r) {
  j = json{{"label", r.label},     {"variant", r.variant}, {"optimizer", r.optimizer},
           {"learning_rate", r.learning_rate}, {"ok", r.ok}, {"config_hash", r.config_hash}};
  if (r.ok) {
    j["val"] = r.val;
    j["test"] = r.test;
  } else {
    j["error"] = r.error;
  }
}

void to_json(json& j, const SweepTable& t) { j = json{{"kind", t.kind}, {"rows", t.rows}}; }

void to_json(json& j, const ImportanceReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back(json{{"feature", e.feature},
                           {"index", e.index},
                           {"mean_drop", e.mean_drop},
                           {"std_drop", e.std_drop},
                           {"drops", e.drops}});
  }
  j = json{{"metric", r.metric}, {"baseline", r.baseline}, {"repeats", r.repeats}, {"seed", r.seed},
           {"entries", entries}};
}

// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::string config_hash(const ModelConfig& model, const TrainConfig& train) {
  const json j{{"model", model}, {"train", train}};
  return sha256_hex(j.dump());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

namespace {
std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
}  // namespace

std::string curves_csv(const RunReport& report) {
  std::string out = "epoch,train_loss,train_acc,test_loss,test_acc\n";
  for (const auto& e : report.curves) {
    out += std::to_string(e.epoch) + "," + fmt_double(e.train_loss) + "," + fmt_double(e.train_acc) +
           "," + fmt_double(e.test_loss) + "," + fmt_double(e.test_acc) + "\n";
  }
  return out;
}

std::string importance_csv(const ImportanceReport& report) {
  std::string out = "feature,mean_drop,std_drop\n";
  for (const auto& e : report.entries) {
    out += e.feature + "," + fmt_double(e.mean_drop) + "," + fmt_double(e.std_drop) + "\n";
  }
  return out;
}

std::string sweep_csv(const SweepTable& table) {
  std::string out = "label,variant,optimizer,learning_rate,acc,auc,ks,ok\n";
  for (const auto& r : table.rows) {
    out += r.label + "," + r.variant + "," + r.optimizer + "," + fmt_double(r.learning_rate) + ",";
    if (r.ok) {
      out += fmt_double(r.test.acc) + "," + fmt_double(r.test.auc) + "," + fmt_double(r.test.ks) + ",1\n";
    } else {
      out += ",,,0\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void put_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xFF);
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json manifest = json::array();
  for (const auto& p : ckpt.params.params()) {
    manifest.push_back(json{{"name", p.name}, {"shape", p.value.shape()}});
  }
  json header{{"format", "credtx-checkpoint"},
              {"version", 1},
              {"config", ckpt.config},
              {"n_features", ckpt.feature_names.size()},
              {"feature_names", ckpt.feature_names},
              {"preprocessor", nullptr},
              {"params", manifest}};
  if (ckpt.preprocessor) header["preprocessor"] = *ckpt.preprocessor;
  std::string bytes = header.dump() + "\n";
  for (const auto& p : ckpt.params.params())
    for (double v : p.value.data()) put_le(bytes, v);
  write_text_file(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw DataError("checkpoint has no header line");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (header.value("format", "") != "credtx-checkpoint" || header.value("version", 0) != 1) {
    throw DataError("not a credtx checkpoint (version 1)");
  }
  Checkpoint ckpt;
  ckpt.config = header.at("config").get<ModelConfig>();
  ckpt.feature_names = header.at("feature_names").get<std::vector<std::string>>();
  if (!header.at("preprocessor").is_null()) ckpt.preprocessor = header.at("preprocessor").get<Preprocessor>();

  const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
  const std::size_t payload_len = bytes.size() - nl - 1;
  std::size_t offset = 0;
  for (const auto& entry : header.at("params")) {
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t count = shape_numel(shape);
    if (offset + 8 * count > payload_len) throw DataError("checkpoint payload is truncated");
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) values[i] = get_le(payload + offset + 8 * i);
    offset += 8 * count;
    ckpt.params.add(entry.at("name").get<std::string>(), Tensor(shape, std::move(values)));
  }
  if (offset != payload_len) throw DataError("checkpoint payload has trailing bytes");
  if (ckpt.params.scalar_count() != parameter_count(ckpt.config, ckpt.feature_names.size())) {
    throw DataError("checkpoint parameters do not match its config");
  }
  return ckpt;
}

}  // namespace credtx
