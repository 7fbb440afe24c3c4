#include "geco2/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <toml++/toml.hpp>

namespace geco2 {

using json = nlohmann::json;

namespace {

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& section) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("config [" + section + "] " + key + ": " + e.what());
  }
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known,
                    const std::string& section) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || item.key() == k;
    if (!ok) throw std::invalid_argument("config [" + section + "]: unknown key '" + item.key() + "'");
  }
}

void apply_model(ModelConfig& c, const json& j) {
  const std::string s = "model";
  reject_unknown(j,
                 {"dim", "exemplars", "cross_attention_layers", "deformable_layers", "heads",
                  "sampling_points", "input_size", "variant", "alpha", "theta_size", "nms_iou",
                  "leaky_slope", "sigma_scale", "mining_ratio", "mining_floor", "box_weight",
                  "pool_size", "backbone_channels", "cross_attention_ffn", "lum_norm"},
                 s);
  read(j, "dim", c.dim, s);
  read(j, "exemplars", c.exemplars, s);
  read(j, "cross_attention_layers", c.cross_attention_layers, s);
  read(j, "deformable_layers", c.deformable_layers, s);
  read(j, "heads", c.heads, s);
  read(j, "sampling_points", c.sampling_points, s);
  read(j, "input_size", c.input_size, s);
  if (j.contains("variant")) {
    std::string v;
    read(j, "variant", v, s);
    c.variant = parse_variant(v);
  }
  read(j, "alpha", c.alpha, s);
  read(j, "theta_size", c.theta_size, s);
  read(j, "nms_iou", c.nms_iou, s);
  read(j, "leaky_slope", c.leaky_slope, s);
  read(j, "sigma_scale", c.sigma_scale, s);
  read(j, "mining_ratio", c.mining_ratio, s);
  read(j, "mining_floor", c.mining_floor, s);
  read(j, "box_weight", c.box_weight, s);
  read(j, "pool_size", c.pool_size, s);
  read(j, "backbone_channels", c.backbone_channels, s);
  read(j, "cross_attention_ffn", c.cross_attention_ffn, s);
  read(j, "lum_norm", c.lum_norm, s);
}

void apply_train(TrainConfig& c, const json& j) {
  const std::string s = "train";
  reject_unknown(j, {"epochs", "batch_size", "lr", "weight_decay", "scale_augment", "seed", "threads"}, s);
  read(j, "epochs", c.epochs, s);
  read(j, "batch_size", c.batch_size, s);
  read(j, "lr", c.lr, s);
  read(j, "weight_decay", c.weight_decay, s);
  read(j, "scale_augment", c.scale_augment, s);
  read(j, "seed", c.seed, s);
  read(j, "threads", c.threads, s);
}

void apply_data(DataConfig& c, const json& j) {
  const std::string s = "data";
  reject_unknown(j,
                 {"preset", "canvas_size", "min_classes", "max_classes", "count_range", "size_range",
                  "size_mode", "size_jitter", "max_coverage", "shapes", "color_jitter", "noise",
                  "overlap_max_iou", "exemplars", "max_attempts", "train_images", "val_images",
                  "test_images", "seed"},
                 s);
  auto& g = c.generator;
  if (j.contains("preset")) {
    std::string preset;
    read(j, "preset", preset, s);
    g = generator_preset(preset);
  }
  read(j, "canvas_size", g.canvas_size, s);
  read(j, "min_classes", g.min_classes, s);
  read(j, "max_classes", g.max_classes, s);
  read(j, "count_range", g.count_range, s);
  read(j, "size_range", g.size_range, s);
  if (j.contains("size_mode")) {
    std::string mode;
    read(j, "size_mode", mode, s);
    if (mode == "per_object") {
      g.size_mode = SizeMode::kPerObject;
    } else if (mode == "per_class") {
      g.size_mode = SizeMode::kPerClass;
    } else {
      throw std::invalid_argument("config [data] size_mode: expected per_object or per_class");
    }
  }
  read(j, "size_jitter", g.size_jitter, s);
  read(j, "max_coverage", g.max_coverage, s);
  if (j.contains("shapes")) {
    std::vector<std::string> names;
    read(j, "shapes", names, s);
    g.shapes.clear();
    for (const auto& n : names) g.shapes.push_back(parse_shape(n));
  }
  read(j, "color_jitter", g.color_jitter, s);
  read(j, "noise", g.noise, s);
  read(j, "overlap_max_iou", g.overlap_max_iou, s);
  read(j, "exemplars", g.exemplars, s);
  read(j, "max_attempts", g.max_attempts, s);
  read(j, "train_images", c.train_images, s);
  read(j, "val_images", c.val_images, s);
  read(j, "test_images", c.test_images, s);
  read(j, "seed", c.seed, s);
  g.seed = c.seed;
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"exemplars", c.exemplars},
          {"cross_attention_layers", c.cross_attention_layers},
          {"deformable_layers", c.deformable_layers},
          {"heads", c.heads},
          {"sampling_points", c.sampling_points},
          {"input_size", c.input_size},
          {"variant", to_string(c.variant)},
          {"alpha", c.alpha},
          {"theta_size", c.theta_size},
          {"nms_iou", c.nms_iou},
          {"leaky_slope", c.leaky_slope},
          {"sigma_scale", c.sigma_scale},
          {"mining_ratio", c.mining_ratio},
          {"mining_floor", c.mining_floor},
          {"box_weight", c.box_weight},
          {"pool_size", c.pool_size},
          {"backbone_channels", c.backbone_channels},
          {"cross_attention_ffn", c.cross_attention_ffn},
          {"lum_norm", c.lum_norm}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  apply_model(c, j);
  validate(c);
  return c;
}

json to_json(const RunConfig& c) {
  const auto& g = c.data.generator;
  json shapes = json::array();
  for (auto s : g.shapes) shapes.push_back(to_string(s));
  return {{"model", to_json(c.model)},
          {"train",
           {{"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"lr", c.train.lr},
            {"weight_decay", c.train.weight_decay},
            {"scale_augment", c.train.scale_augment},
            {"seed", c.train.seed},
            {"threads", c.train.threads}}},
          {"data",
           {{"preset", g.preset},
            {"canvas_size", g.canvas_size},
            {"min_classes", g.min_classes},
            {"max_classes", g.max_classes},
            {"count_range", g.count_range},
            {"size_range", g.size_range},
            {"size_mode", g.size_mode == SizeMode::kPerObject ? "per_object" : "per_class"},
            {"size_jitter", g.size_jitter},
            {"max_coverage", g.max_coverage},
            {"shapes", shapes},
            {"color_jitter", g.color_jitter},
            {"noise", g.noise},
            {"overlap_max_iou", g.overlap_max_iou},
            {"exemplars", g.exemplars},
            {"max_attempts", g.max_attempts},
            {"train_images", c.data.train_images},
            {"val_images", c.data.val_images},
            {"test_images", c.data.test_images},
            {"seed", c.data.seed}}}};
}

void apply_json(RunConfig& config, const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config root must be a table");
  for (const auto& item : j.items()) {
    if (item.key() == "model") {
      apply_model(config.model, item.value());
    } else if (item.key() == "train") {
      apply_train(config.train, item.value());
    } else if (item.key() == "data") {
      apply_data(config.data, item.value());
    } else {
      throw std::invalid_argument("config: unknown section [" + item.key() + "]");
    }
  }
  validate(config.model);
  validate(config.data.generator);
  if (config.train.epochs < 0 || config.train.batch_size < 1) {
    throw std::invalid_argument("config [train]: epochs must be >= 0 and batch_size >= 1");
  }
}

namespace {

json toml_to_json(const toml::table& table) {
  std::ostringstream out;
  out << toml::json_formatter{table};
  return json::parse(out.str());
}

toml::table parse_toml(const std::string& text, const std::string& source) {
  try {
    return toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": "
        << e.description();
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

RunConfig parse_config(const std::string& toml_text, const std::string& source) {
  RunConfig config;
  apply_json(config, toml_to_json(parse_toml(toml_text, source)));
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream text;
  text << f.rdbuf();
  return parse_config(text.str(), path.string());
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw std::invalid_argument("override '" + assignment + "' must look like section.key=value");
  }
  const std::string section = assignment.substr(0, dot);
  const std::string key = assignment.substr(dot + 1, eq - dot - 1);
  const std::string value = assignment.substr(eq + 1);

  json parsed;
  try {
    parsed = toml_to_json(toml::parse("v = " + value))["v"];
  } catch (const toml::parse_error&) {
    parsed = value;
  }
  apply_json(config, json{{section, {{key, parsed}}}});
}

}  // namespace geco2
