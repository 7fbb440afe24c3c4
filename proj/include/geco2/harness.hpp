#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geco2/config.hpp"
#include "geco2/data.hpp"
#include "geco2/model.hpp"

namespace geco2 {

inline const std::array<std::string, 3> kSplits{"train", "val", "test"};

/// Scene seeds of a split. Splits draw from disjoint seed ranges.
std::vector<uint64_t> split_seeds(const DataConfig& data, const std::string& split);

/// Writes `<split>.json` and `images/*.png` for train, val and test.
/// An existing non-empty `out` is an error unless `force` is set.
void generate_dataset(const DataConfig& data, const std::filesystem::path& out, bool force);

/// Reads `<root>/<split>.json` and its images.
std::vector<SceneAnnotation> load_split(const std::filesystem::path& root, const std::string& split);

/// A scene after the test-time rescale rule, as tensors.
struct PreparedInput {
  torch::Tensor image;      // (3, S, S)
  torch::Tensor exemplars;  // (k, 4) input pixels
  std::vector<Box> targets;  // input pixels
  double scale = 1.0;
};

PreparedInput prepare_input(const SceneAnnotation& scene, int input_size);

struct TrainSummary {
  int64_t steps = 0;
  int epochs_run = 0;
  double best_val_mae = 0.0;
  double tau = 0.0;
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
  bool all_finite = true;
  double seconds = 0.0;
  std::filesystem::path best_checkpoint;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  bool verbose = true;
};

/// Trains on `<dataset>/train.json`, selects the checkpoint with the best
/// val MAE (threshold calibrated each epoch) and writes `best.pt`, `last.pt`
/// and `metrics.csv` under out_dir.
TrainSummary train(const RunConfig& config, const std::filesystem::path& dataset,
                   const TrainOptions& options);

struct Calibration {
  double tau = 0.0;
  double f1 = 0.0;
  std::vector<std::pair<double, double>> sweep;  // (tau, f1)
};

/// Sweeps tau over {0.05, ..., 0.95} * max score and keeps the best F1 at IoU 0.5.
Calibration calibrate_threshold(GeCo2& model, const std::vector<SceneAnnotation>& scenes);

struct ImageResult {
  std::string id;
  int gt_count = 0;
  DetectionSet detections;  // original image coordinates
  double scale = 1.0;
  double seconds = 0.0;
  std::vector<int64_t> input_shape;
};

struct EvalReport {
  std::string split;
  double tau = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  double ap = 0.0;
  double ap50 = 0.0;
  double mean_seconds = 0.0;
  std::optional<double> mae_dense;  // images with more than 300 objects
  int dense_images = 0;
  double median_relative_error = 0.0;
  double max_scale = 0.0;
  int64_t forward_calls = 0;
  std::vector<ImageResult> images;
};

EvalReport evaluate(GeCo2& model, double tau, const std::vector<SceneAnnotation>& scenes,
                    const std::string& split);

nlohmann::json predictions_json(const DetectionSet& dets);
nlohmann::json report_json(const EvalReport& report);
/// metrics.csv, report.json and predictions.json under out_dir.
void write_eval_outputs(const EvalReport& report, const std::filesystem::path& out_dir, int64_t step);

/// Counts in an arbitrary image; boxes in original image coordinates.
DetectionSet infer_image(GeCo2& model, double tau, const cv::Mat& image,
                         const std::vector<Box>& exemplars, const std::string& image_id);

/// Detections in green, exemplars in magenta, count in the corner.
cv::Mat render_overlay(const cv::Mat& image, const std::vector<Box>& exemplars,
                       const DetectionSet& dets);

/// Applies an ablation variant name: full, fp, q1_only, q2_only, q3_only,
/// alpha0, nda1 or nca2.
void apply_ablation(RunConfig& config, const std::string& name);

struct AblationRow {
  std::string variant;
  uint64_t seed = 0;
  double mae = 0.0;
  double rmse = 0.0;
  double ap = 0.0;
  double ap50 = 0.0;
  double median_relative_error = 0.0;
  std::optional<double> mae_dense;
};

/// Trains and evaluates every variant for every seed on one dataset.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::filesystem::path& dataset,
                                      const std::vector<std::string>& variants,
                                      const std::vector<uint64_t>& seeds,
                                      const std::filesystem::path& out_dir,
                                      const std::string& split = "val");

/// Per-seed CSV and a per-variant mean markdown table.
void write_ablation_table(const std::vector<AblationRow>& rows, const std::filesystem::path& out_dir);

}  // namespace geco2
