#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "geco2/geometry.hpp"

namespace geco2 {

struct CountErrors {
  double mae = 0.0;
  double rmse = 0.0;
};

CountErrors mae_rmse(const std::vector<int>& gt_counts, const std::vector<int>& pred_counts);

/// Greedy COCO-style matching of one image: predictions visited by
/// descending score, each takes the unmatched ground truth of highest IoU
/// (>= iou_threshold). Returns the matched gt index per prediction, in the
/// input order of `preds`, or -1.
std::vector<int> match_detections(const std::vector<Box>& preds, const std::vector<Box>& gts,
                                  double iou_threshold);

struct ApResult {
  double ap = 0.0;    // mean over IoU 0.50:0.05:0.95
  double ap50 = 0.0;
};

/// 101-point interpolated AP for a single IoU threshold.
double average_precision_at(const std::vector<DetectionSet>& preds,
                            const std::vector<std::vector<Box>>& gts, double iou_threshold);

/// Throws if there is no ground truth in any image.
ApResult average_precision(const std::vector<DetectionSet>& preds,
                           const std::vector<std::vector<Box>>& gts);

/// F1 after dropping predictions scored below tau.
double f1_at_threshold(const std::vector<DetectionSet>& preds,
                       const std::vector<std::vector<Box>>& gts, double tau,
                       double iou_threshold = 0.5);

/// Appends `split,metric,value,step` rows; writes the header for a new file.
class MetricsCsv {
 public:
  explicit MetricsCsv(const std::filesystem::path& path, bool append = false);

  void write(const std::string& split, const std::string& metric, double value, long step);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

}  // namespace geco2
