#include "geco2/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace geco2 {

using json = nlohmann::json;

std::string to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::kDisc: return "disc";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
    case ShapeKind::kRing: return "ring";
  }
  return "unknown";
}

ShapeKind parse_shape(const std::string& name) {
  if (name == "disc") return ShapeKind::kDisc;
  if (name == "square") return ShapeKind::kSquare;
  if (name == "triangle") return ShapeKind::kTriangle;
  if (name == "ring") return ShapeKind::kRing;
  throw std::invalid_argument("unknown shape '" + name + "'");
}

void validate(const GeneratorConfig& c) {
  if (c.canvas_size < 16) throw std::invalid_argument("canvas_size must be at least 16");
  if (c.min_classes < 1 || c.max_classes > 4 || c.min_classes > c.max_classes) {
    throw std::invalid_argument("class count must lie in 1..4");
  }
  if (c.count_range.first < 1 || c.count_range.first > c.count_range.second) {
    throw std::invalid_argument("count_range must satisfy 1 <= min <= max");
  }
  if (c.size_range.first < 4.0 || c.size_range.first > c.size_range.second) {
    throw std::invalid_argument("size_range min must be >= 4 px and <= max");
  }
  if (c.size_range.second > c.canvas_size) {
    throw std::invalid_argument("size_range max exceeds the canvas");
  }
  if (c.overlap_max_iou < 0.0 || c.overlap_max_iou >= 1.0) {
    throw std::invalid_argument("overlap_max_iou must lie in [0, 1)");
  }
  if (c.shapes.empty()) throw std::invalid_argument("at least one shape family is required");
  if (c.exemplars < 1) throw std::invalid_argument("exemplars must be >= 1");
  if (c.max_coverage <= 0.0 || c.max_coverage > 1.0) {
    throw std::invalid_argument("max_coverage must lie in (0, 1]");
  }
}

GeneratorConfig generator_preset(const std::string& name) {
  GeneratorConfig c;
  c.preset = name;
  if (name == "uniform") {
    c.count_range = {5, 20};
    c.size_range = {12.0, 18.0};
    c.size_jitter = 0.1;
  } else if (name == "multiscale") {
    // Target plus one distractor class; sides mixed per image over 8..96 px.
    c.min_classes = 2;
    c.max_classes = 2;
    c.count_range = {3, 8};
    c.size_range = {8.0, 96.0};
    c.size_mode = SizeMode::kPerObject;
  } else if (name == "dense") {
    c.count_range = {300, 500};
    c.size_range = {6.0, 14.0};
    c.size_jitter = 0.1;
    c.max_coverage = 0.40;
  } else if (name == "multiclass") {
    c.min_classes = 2;
    c.max_classes = 4;
    c.count_range = {3, 12};
    c.size_range = {10.0, 20.0};
  } else {
    throw std::invalid_argument("unknown preset '" + name +
                                "' (expected uniform, multiscale, dense or multiclass)");
  }
  return c;
}

std::vector<Box> SceneAnnotation::target_boxes() const {
  std::vector<Box> out;
  for (const auto& inst : instances) {
    if (inst.class_id == target_class) out.push_back(inst.box);
  }
  return out;
}

std::vector<Box> SceneAnnotation::exemplar_boxes() const {
  std::vector<Box> out;
  for (int id : exemplar_ids) out.push_back(instances.at(static_cast<std::size_t>(id)).box);
  return out;
}

bool same_annotation(const SceneAnnotation& a, const SceneAnnotation& b) {
  return a.id == b.id && a.file == b.file && a.width == b.width && a.height == b.height &&
         a.instances == b.instances && a.exemplar_ids == b.exemplar_ids &&
         a.target_class == b.target_class;
}

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 8> kPalette{{{0.90, 0.20, 0.20},
                                       {0.20, 0.85, 0.30},
                                       {0.25, 0.40, 0.95},
                                       {0.95, 0.85, 0.20},
                                       {0.90, 0.30, 0.85},
                                       {0.20, 0.85, 0.90},
                                       {0.95, 0.55, 0.15},
                                       {0.92, 0.92, 0.92}}};

bool inside_shape(ShapeKind shape, double dx, double dy, double half) {
  switch (shape) {
    case ShapeKind::kSquare: return std::abs(dx) <= half && std::abs(dy) <= half;
    case ShapeKind::kDisc: return dx * dx + dy * dy <= half * half;
    case ShapeKind::kRing: {
      const double r2 = dx * dx + dy * dy;
      return r2 <= half * half && r2 >= 0.25 * half * half;
    }
    case ShapeKind::kTriangle: return dy >= -half && dy <= half && std::abs(dx) <= 0.5 * (dy + half);
  }
  return false;
}

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

bool conflicts(const Box& candidate, const std::vector<Box>& placed, double max_iou) {
  for (const Box& p : placed) {
    if (max_iou <= 0.0) {
      // Keep a one-pixel gap so objects never touch.
      if (candidate.x1 < p.x2 + 1.0 && p.x1 < candidate.x2 + 1.0 && candidate.y1 < p.y2 + 1.0 &&
          p.y1 < candidate.y2 + 1.0) {
        return true;
      }
    } else if (iou(candidate, p) > max_iou) {
      return true;
    }
  }
  return false;
}

struct PendingObject {
  int class_id;
  double side;
};

}  // namespace

SceneAnnotation generate_scene(const GeneratorConfig& config, uint64_t seed) {
  validate(config);
  std::mt19937_64 rng(seed);
  const int size = config.canvas_size;

  SceneAnnotation scene;
  scene.id = config.preset + "_" + std::to_string(seed);
  scene.file = "images/" + scene.id + ".png";
  scene.width = size;
  scene.height = size;

  const int n_classes = std::uniform_int_distribution<int>(config.min_classes, config.max_classes)(rng);
  scene.target_class = std::uniform_int_distribution<int>(0, n_classes - 1)(rng);

  std::vector<ShapeKind> shapes = config.shapes;
  std::shuffle(shapes.begin(), shapes.end(), rng);
  std::vector<int> palette_order(kPalette.size());
  std::iota(palette_order.begin(), palette_order.end(), 0);
  std::shuffle(palette_order.begin(), palette_order.end(), rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double gray = 0.1 + 0.2 * unit(rng);
  const Rgb background{gray + 0.03 * (unit(rng) - 0.5), gray + 0.03 * (unit(rng) - 0.5),
                       gray + 0.03 * (unit(rng) - 0.5)};

  std::vector<int> counts(static_cast<std::size_t>(n_classes));
  std::vector<double> base_side(static_cast<std::size_t>(n_classes));
  const auto [smin, smax] = config.size_range;
  double footprint = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    counts[c] = std::uniform_int_distribution<int>(config.count_range.first, config.count_range.second)(rng);
    base_side[c] = log_uniform(rng, smin, smax);
    footprint += counts[c] * (base_side[c] + 1.0) * (base_side[c] + 1.0);
  }
  if (config.size_mode == SizeMode::kPerClass) {
    const double budget = config.max_coverage * size * size;
    if (footprint > budget) {
      const double shrink = std::sqrt(budget / footprint);
      for (auto& s : base_side) s = std::max(smin, (s + 1.0) * shrink - 1.0);
    }
  }

  std::vector<PendingObject> pending;
  for (int c = 0; c < n_classes; ++c) {
    for (int i = 0; i < counts[c]; ++i) {
      double side = 0.0;
      if (config.size_mode == SizeMode::kPerObject) {
        side = log_uniform(rng, smin, smax);
      } else {
        side = base_side[c] * (1.0 + config.size_jitter * (2.0 * unit(rng) - 1.0));
      }
      pending.push_back({c, std::clamp(side, smin, smax)});
    }
  }
  // Large objects first: sequential placement packs better.
  std::stable_sort(pending.begin(), pending.end(),
                   [](const PendingObject& a, const PendingObject& b) { return a.side > b.side; });

  std::vector<float> pixels(static_cast<std::size_t>(size) * size * 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(background[i % 3]);

  std::vector<Box> placed;
  for (const auto& obj : pending) {
    const double half = obj.side / 2.0;
    std::uniform_real_distribution<double> pos(half, size - half);
    bool ok = false;
    Box geom;
    for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
      const double cx = pos(rng);
      const double cy = pos(rng);
      geom = {cx - half, cy - half, cx + half, cy + half, std::nullopt};
      if (!conflicts(geom, placed, config.overlap_max_iou)) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      scene.placement_incomplete = true;
      continue;
    }

    const ShapeKind shape = shapes[static_cast<std::size_t>(obj.class_id) % shapes.size()];
    const Rgb& base = kPalette[palette_order[static_cast<std::size_t>(obj.class_id)]];
    Rgb color;
    for (int ch = 0; ch < 3; ++ch) {
      color[ch] = std::clamp(base[ch] + config.color_jitter * (2.0 * unit(rng) - 1.0), 0.0, 1.0);
    }
    const double cx = geom.center_x();
    const double cy = geom.center_y();
    int minx = size, miny = size, maxx = -1, maxy = -1;
    for (int y = std::max(0, static_cast<int>(geom.y1)); y < std::min(size, static_cast<int>(geom.y2) + 1); ++y) {
      for (int x = std::max(0, static_cast<int>(geom.x1)); x < std::min(size, static_cast<int>(geom.x2) + 1); ++x) {
        if (!inside_shape(shape, x + 0.5 - cx, y + 0.5 - cy, half)) continue;
        float* px = &pixels[(static_cast<std::size_t>(y) * size + x) * 3];
        for (int ch = 0; ch < 3; ++ch) px[ch] = static_cast<float>(color[ch]);
        minx = std::min(minx, x);
        miny = std::min(miny, y);
        maxx = std::max(maxx, x);
        maxy = std::max(maxy, y);
      }
    }
    if (maxx < 0) {
      scene.placement_incomplete = true;
      continue;
    }
    placed.push_back(geom);
    scene.instances.push_back({{static_cast<double>(minx), static_cast<double>(miny),
                                static_cast<double>(maxx + 1), static_cast<double>(maxy + 1),
                                std::nullopt},
                               obj.class_id});
  }

  std::normal_distribution<double> noise(0.0, config.noise);
  scene.image = cv::Mat(size, size, CV_8UC3);
  for (int y = 0; y < size; ++y) {
    auto* row = scene.image.ptr<cv::Vec3b>(y);
    for (int x = 0; x < size; ++x) {
      const float* px = &pixels[(static_cast<std::size_t>(y) * size + x) * 3];
      for (int ch = 0; ch < 3; ++ch) {
        const double v = config.noise > 0.0 ? px[ch] + noise(rng) : px[ch];
        // OpenCV stores BGR.
        row[x][2 - ch] = cv::saturate_cast<uchar>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }

  std::vector<int> candidates;
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    if (scene.instances[i].class_id == scene.target_class) candidates.push_back(static_cast<int>(i));
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  const auto k = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(config.exemplars));
  if (k < static_cast<std::size_t>(config.exemplars)) scene.placement_incomplete = true;
  scene.exemplar_ids.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k));
  return scene;
}

std::vector<Box> scale_boxes(const std::vector<Box>& boxes, double scale) {
  std::vector<Box> out = boxes;
  for (Box& b : out) {
    b.x1 *= scale;
    b.y1 *= scale;
    b.x2 *= scale;
    b.y2 *= scale;
  }
  return out;
}

RescaledInput rescale_and_pad(const cv::Mat& image, const std::vector<Box>& exemplars,
                              int input_size) {
  if (exemplars.empty()) throw std::invalid_argument("rescale_and_pad needs at least one exemplar");
  if (image.empty()) throw std::invalid_argument("rescale_and_pad got an empty image");
  double avg_w = 0.0;
  double avg_h = 0.0;
  for (const Box& b : exemplars) {
    avg_w += b.width();
    avg_h += b.height();
  }
  avg_w /= static_cast<double>(exemplars.size());
  avg_h /= static_cast<double>(exemplars.size());

  RescaledInput out;
  const double threshold = 80.0 * input_size / 1024.0;
  const double largest = std::max(avg_w, avg_h);
  out.scale = largest > threshold ? threshold / largest : 1.0;
  const double fit = std::min(static_cast<double>(input_size) / image.cols,
                              static_cast<double>(input_size) / image.rows);
  if (image.cols * out.scale > input_size || image.rows * out.scale > input_size) {
    std::cerr << "warning: image " << image.cols << "x" << image.rows
              << " downscaled further to fit the input size " << input_size << "\n";
    out.scale = fit;
    out.fit_downscaled = true;
  }

  cv::Mat content = image;
  if (out.scale < 1.0) {
    const int w = std::clamp(static_cast<int>(std::lround(image.cols * out.scale)), 1, input_size);
    const int h = std::clamp(static_cast<int>(std::lround(image.rows * out.scale)), 1, input_size);
    cv::resize(image, content, cv::Size(w, h), 0, 0, cv::INTER_AREA);
  }
  out.image = cv::Mat::zeros(input_size, input_size, image.type());
  content.copyTo(out.image(cv::Rect(0, 0, content.cols, content.rows)));
  out.exemplars = scale_boxes(exemplars, out.scale);
  return out;
}

namespace {

Box clip_box(const Box& b, double size) {
  Box c = b;
  c.x1 = std::clamp(c.x1, 0.0, size);
  c.x2 = std::clamp(c.x2, 0.0, size);
  c.y1 = std::clamp(c.y1, 0.0, size);
  c.y2 = std::clamp(c.y2, 0.0, size);
  return c;
}

Box shift_box(const Box& b, double dx, double dy) {
  return {b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy, b.score};
}

bool inside_window(const Box& b, double ox, double oy, double size) {
  return b.x1 >= ox && b.y1 >= oy && b.x2 <= ox + size && b.y2 <= oy + size;
}

}  // namespace

Sample scale_augment(const Sample& sample, double scale, int input_size, std::mt19937_64& rng) {
  if (sample.image.empty()) throw std::invalid_argument("scale_augment got an empty image");
  const int new_w = std::max(1, static_cast<int>(std::lround(sample.image.cols * scale)));
  const int new_h = std::max(1, static_cast<int>(std::lround(sample.image.rows * scale)));
  cv::Mat resized;
  if (new_w == sample.image.cols && new_h == sample.image.rows) {
    resized = sample.image;
  } else {
    cv::resize(sample.image, resized, cv::Size(new_w, new_h), 0, 0,
               scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
  }
  const double sx = static_cast<double>(new_w) / sample.image.cols;
  const double sy = static_cast<double>(new_h) / sample.image.rows;
  auto rescale = [&](const std::vector<Box>& boxes) {
    std::vector<Box> out = boxes;
    for (Box& b : out) {
      b.x1 *= sx;
      b.x2 *= sx;
      b.y1 *= sy;
      b.y2 *= sy;
    }
    return out;
  };
  const std::vector<Box> targets = rescale(sample.targets);
  const std::vector<Box> exemplars = rescale(sample.exemplars);

  int ox = 0;
  int oy = 0;
  const int max_ox = std::max(0, new_w - input_size);
  const int max_oy = std::max(0, new_h - input_size);
  if (max_ox > 0 || max_oy > 0) {
    std::uniform_int_distribution<int> dx(0, max_ox);
    std::uniform_int_distribution<int> dy(0, max_oy);
    bool found = false;
    for (int attempt = 0; attempt < 32 && !found; ++attempt) {
      ox = dx(rng);
      oy = dy(rng);
      found = std::all_of(exemplars.begin(), exemplars.end(),
                          [&](const Box& b) { return inside_window(b, ox, oy, input_size); });
    }
    if (!found) return sample;  // no window keeps every exemplar; leave the sample as is
  }

  Sample out;
  out.image = cv::Mat::zeros(input_size, input_size, sample.image.type());
  const int cw = std::min(input_size, new_w - ox);
  const int ch = std::min(input_size, new_h - oy);
  resized(cv::Rect(ox, oy, cw, ch)).copyTo(out.image(cv::Rect(0, 0, cw, ch)));

  const double s = input_size;
  for (const Box& b : targets) {
    const Box moved = shift_box(b, -ox, -oy);
    const Box clipped = clip_box(moved, s);
    if (clipped.area() > 0.0 && clipped.area() >= 0.3 * moved.area()) out.targets.push_back(clipped);
  }
  for (const Box& b : exemplars) out.exemplars.push_back(clip_box(shift_box(b, -ox, -oy), s));
  return out;
}

Sample scale_augment(const Sample& sample, int input_size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  const double scale = u(rng);
  return scale_augment(sample, scale, input_size, rng);
}

torch::Tensor image_to_tensor(const cv::Mat& bgr) {
  if (bgr.empty() || bgr.type() != CV_8UC3) throw std::invalid_argument("expected an 8-bit BGR image");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat).div_(255.0).contiguous();
}

torch::Tensor boxes_to_tensor(const std::vector<Box>& boxes) {
  auto t = torch::zeros({static_cast<int64_t>(boxes.size()), 4}, torch::kFloat);
  auto a = t.accessor<float, 2>();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    a[i][0] = static_cast<float>(boxes[i].x1);
    a[i][1] = static_cast<float>(boxes[i].y1);
    a[i][2] = static_cast<float>(boxes[i].x2);
    a[i][3] = static_cast<float>(boxes[i].y2);
  }
  return t;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << contents;
    if (!f) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_annotations(const std::vector<SceneAnnotation>& scenes,
                      const std::filesystem::path& path) {
  json images = json::array();
  for (const auto& s : scenes) {
    json instances = json::array();
    for (const auto& inst : s.instances) {
      instances.push_back({{"box", {inst.box.x1, inst.box.y1, inst.box.x2, inst.box.y2}},
                           {"class", inst.class_id}});
    }
    images.push_back({{"id", s.id},
                      {"file", s.file},
                      {"width", s.width},
                      {"height", s.height},
                      {"instances", instances},
                      {"exemplar_ids", s.exemplar_ids},
                      {"target_class", s.target_class}});
  }
  write_file_atomic(path, json{{"images", images}}.dump(1) + "\n");
}

namespace {

const json& require(const json& obj, const char* field, const std::string& where) {
  if (!obj.is_object()) throw std::runtime_error(where + ": expected an object");
  auto it = obj.find(field);
  if (it == obj.end()) throw std::runtime_error(where + ": missing field '" + field + "'");
  return *it;
}

template <typename T>
T get_as(const json& value, const std::string& where) {
  try {
    return value.get<T>();
  } catch (const json::exception& e) {
    throw std::runtime_error(where + ": " + e.what());
  }
}

}  // namespace

std::vector<SceneAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open annotation file " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    // nlohmann reports the line and column of syntax errors.
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  const std::string file = path.string();
  const json& images = require(doc, "images", file);
  if (!images.is_array()) throw std::runtime_error(file + ": 'images' must be an array");

  std::vector<SceneAnnotation> scenes;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = file + ": images[" + std::to_string(i) + "]";
    const json& img = images[i];
    SceneAnnotation s;
    s.id = get_as<std::string>(require(img, "id", where), where + ".id");
    s.file = get_as<std::string>(require(img, "file", where), where + ".file");
    s.width = get_as<int>(require(img, "width", where), where + ".width");
    s.height = get_as<int>(require(img, "height", where), where + ".height");
    const json& inst = require(img, "instances", where);
    for (std::size_t j = 0; j < inst.size(); ++j) {
      const std::string iw = where + ".instances[" + std::to_string(j) + "]";
      const auto box = get_as<std::vector<double>>(require(inst[j], "box", iw), iw + ".box");
      if (box.size() != 4) throw std::runtime_error(iw + ".box: expected 4 numbers");
      Instance in;
      in.box = {box[0], box[1], box[2], box[3], std::nullopt};
      in.class_id = get_as<int>(require(inst[j], "class", iw), iw + ".class");
      if (!in.box.valid()) throw std::runtime_error(iw + ".box: invalid box");
      s.instances.push_back(in);
    }
    s.exemplar_ids = get_as<std::vector<int>>(require(img, "exemplar_ids", where), where + ".exemplar_ids");
    s.target_class = get_as<int>(require(img, "target_class", where), where + ".target_class");
    for (int id : s.exemplar_ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= s.instances.size()) {
        throw std::runtime_error(where + ".exemplar_ids: index " + std::to_string(id) + " out of range");
      }
      const auto& ex = s.instances[static_cast<std::size_t>(id)];
      if (ex.class_id != s.target_class) {
        throw std::runtime_error(where + ".exemplar_ids: exemplar " + std::to_string(id) +
                                 " is not of the target class");
      }
      if (ex.box.area() <= 0.0) {
        throw std::runtime_error(where + ".exemplar_ids: exemplar " + std::to_string(id) +
                                 " has zero area");
      }
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

void load_image(SceneAnnotation& scene, const std::filesystem::path& root) {
  const auto p = root / scene.file;
  scene.image = cv::imread(p.string(), cv::IMREAD_COLOR);
  if (scene.image.empty()) throw std::runtime_error("cannot read image " + p.string());
}

}  // namespace geco2
