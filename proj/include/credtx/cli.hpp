#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <utility>

#include "credtx/data.hpp"
#include "credtx/io.hpp"
#include "credtx/model.hpp"
#include "credtx/training.hpp"

namespace credtx {

inline constexpr const char* kToolVersion = "0.1.0";

// Environment variable naming the directory that holds cs-training.csv when
// --data is not given.
inline constexpr const char* kDataDirEnv = "CREDTX_DATA_DIR";

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// The merged config file: {"model":{}, "train":{}, "schema":{}, "split":{},
// "data":{"subsample":0, "subsample_seed":0, "winsorize":null | [lo, hi]}}.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SchemaConfig schema;
  SplitSpec split;
  LoadOptions load;
  std::optional<std::pair<double, double>> winsorize;
};

RunConfig parse_run_config(const json& j);
json run_config_json(const RunConfig& c);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace credtx
