#pragma once

// JSON (de)serialization of configs and reports, content hashing, and the
// checkpoint file format.
//
// Checkpoint layout:
//   line 1   : compact JSON header terminated by '\n'
//              {"format":"credtx-checkpoint","version":1,"config":{...},
//               "n_features":F,"feature_names":[...],"preprocessor":{...}|null,
//               "params":[{"name":..., "shape":[...]}, ...]}
//   payload  : every parameter value as little-endian IEEE-754 binary64,
//              concatenated in manifest order.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "credtx/data.hpp"
#include "credtx/importance.hpp"
#include "credtx/metrics.hpp"
#include "credtx/model.hpp"
#include "credtx/training.hpp"

namespace credtx {

using json = nlohmann::ordered_json;

// Parsers start from defaults and override the keys present; unknown keys
// raise ConfigError so typos do not silently fall back to defaults.
void to_json(json& j, const ModelConfig& c);
void from_json(const json& j, ModelConfig& c);
void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);
void to_json(json& j, const SchemaConfig& c);
void from_json(const json& j, SchemaConfig& c);
void to_json(json& j, const SplitSpec& c);
void from_json(const json& j, SplitSpec& c);
void to_json(json& j, const SynthSpec& s);
void from_json(const json& j, SynthSpec& s);
void to_json(json& j, const Preprocessor& p);
void from_json(const json& j, Preprocessor& p);

void to_json(json& j, const MetricsRecord& m);
void from_json(const json& j, MetricsRecord& m);
void to_json(json& j, const EpochRecord& e);
void to_json(json& j, const RunReport& r);  // omits wall_clock_seconds
void to_json(json& j, const SweepRow& r);
void to_json(json& j, const SweepTable& t);
void to_json(json& j, const ImportanceReport& r);

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);
std::string config_hash(const ModelConfig& model, const TrainConfig& train);

json read_json_file(const std::filesystem::path& path);
// Writes `j.dump(2)` plus a trailing newline.
void write_json_file(const std::filesystem::path& path, const json& j);
void write_text_file(const std::filesystem::path& path, std::string_view text);

std::string curves_csv(const RunReport& report);
std::string importance_csv(const ImportanceReport& report);
std::string sweep_csv(const SweepTable& table);

struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> feature_names;
  std::optional<Preprocessor> preprocessor;
  ParamStore params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace credtx
