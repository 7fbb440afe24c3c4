#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "geco2/data.hpp"
#include "geco2/model.hpp"

namespace geco2 {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 4;
  double lr = 1e-4;
  double weight_decay = 5e-5;
  bool scale_augment = true;
  uint64_t seed = 0;
  int threads = 0;  // 0 keeps the torch default
};

struct DataConfig {
  GeneratorConfig generator = generator_preset("uniform");
  int train_images = 200;
  int val_images = 50;
  int test_images = 50;
  uint64_t seed = 0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& c);

/// Applies the `model`, `train` and `data` objects of `j` on top of `config`.
/// Unknown sections or keys are errors.
void apply_json(RunConfig& config, const nlohmann::json& j);

/// Parses TOML text with `[model]`, `[train]`, `[data]` tables.
RunConfig parse_config(const std::string& toml_text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// `section.key=value`, value in TOML syntax (bare words are taken as strings).
void apply_override(RunConfig& config, const std::string& assignment);

}  // namespace geco2
