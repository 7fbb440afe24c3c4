#pragma once

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "geco2/geometry.hpp"

namespace geco2 {

enum class ShapeKind { kDisc, kSquare, kTriangle, kRing };

std::string to_string(ShapeKind s);
ShapeKind parse_shape(const std::string& name);

/// How object sides are drawn from size_range.
enum class SizeMode {
  kPerObject,  // every object independently, log-uniform over the range
  kPerClass,   // one base size per class, objects jittered around it
};

struct GeneratorConfig {
  std::string preset = "custom";
  int canvas_size = 256;
  int min_classes = 1;
  int max_classes = 1;
  std::pair<int, int> count_range{5, 20};  // per class, inclusive
  std::pair<double, double> size_range{12.0, 18.0};
  SizeMode size_mode = SizeMode::kPerClass;
  double size_jitter = 0.15;  // relative, kPerClass only
  /// Upper bound on the fraction of canvas covered by object boxes (with
  /// their 1 px gap). Per-class base sizes are shrunk to respect it.
  double max_coverage = 0.45;
  std::vector<ShapeKind> shapes{ShapeKind::kDisc, ShapeKind::kSquare, ShapeKind::kTriangle,
                                ShapeKind::kRing};
  double color_jitter = 0.05;
  double noise = 0.02;
  double overlap_max_iou = 0.0;
  int exemplars = 3;
  int max_attempts = 400;  // placement attempts per object
  uint64_t seed = 0;
};

void validate(const GeneratorConfig& config);

/// Built-in presets: uniform, multiscale, dense, multiclass.
GeneratorConfig generator_preset(const std::string& name);

struct Instance {
  Box box;
  int class_id = 0;

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct SceneAnnotation {
  std::string id;
  std::string file;  // image path relative to the annotation file
  int width = 0;
  int height = 0;
  std::vector<Instance> instances;
  std::vector<int> exemplar_ids;
  int target_class = 0;
  /// Set by the generator when some objects could not be placed.
  bool placement_incomplete = false;
  cv::Mat image;  // 8-bit BGR; empty until loaded or generated

  std::vector<Box> target_boxes() const;
  std::vector<Box> exemplar_boxes() const;
  int target_count() const { return static_cast<int>(target_boxes().size()); }
};

bool same_annotation(const SceneAnnotation& a, const SceneAnnotation& b);

/// Deterministic scene for (config, seed).
SceneAnnotation generate_scene(const GeneratorConfig& config, uint64_t seed);

/// Result of the test-time rescale rule.
struct RescaledInput {
  cv::Mat image;  // input_size x input_size, content anchored top-left
  std::vector<Box> exemplars;
  double scale = 1.0;
  bool fit_downscaled = false;  // extra downscale so the image fits
};

/// s = min(1, threshold / max(avg exemplar w, avg exemplar h)) with
/// threshold = 80 * input_size / 1024, further reduced if the scaled image
/// would not fit; then zero-pad bottom-right to input_size.
RescaledInput rescale_and_pad(const cv::Mat& image, const std::vector<Box>& exemplars,
                              int input_size);

std::vector<Box> scale_boxes(const std::vector<Box>& boxes, double scale);

/// Image plus boxes in input coordinates, as fed to training.
struct Sample {
  cv::Mat image;
  std::vector<Box> targets;
  std::vector<Box> exemplars;
};

/// Scales the image and boxes by `scale`, then crops (random offset) or pads
/// to input_size. Boxes are clipped; targets losing more than 70 % of their
/// area are dropped. Exemplars are kept whole when an offset allows it.
Sample scale_augment(const Sample& sample, double scale, int input_size, std::mt19937_64& rng);

/// Draws the scale uniformly from [0.5, 1.5].
Sample scale_augment(const Sample& sample, int input_size, std::mt19937_64& rng);

/// 8-bit BGR image -> (3, H, W) float RGB in [0, 1].
torch::Tensor image_to_tensor(const cv::Mat& bgr);

/// Boxes -> (n, 4) float tensor.
torch::Tensor boxes_to_tensor(const std::vector<Box>& boxes);

void save_annotations(const std::vector<SceneAnnotation>& scenes,
                      const std::filesystem::path& path);
/// Parses the annotation JSON. Images are not loaded.
std::vector<SceneAnnotation> load_annotations(const std::filesystem::path& path);
/// Loads scene.image from `root / scene.file`.
void load_image(SceneAnnotation& scene, const std::filesystem::path& root);

/// Writes `contents` to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace geco2
