#include "geco2/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace geco2 {

CountErrors mae_rmse(const std::vector<int>& gt_counts, const std::vector<int>& pred_counts) {
  if (gt_counts.size() != pred_counts.size()) {
    throw std::invalid_argument("mae_rmse: " + std::to_string(gt_counts.size()) +
                                " ground-truth counts vs " + std::to_string(pred_counts.size()) +
                                " predictions");
  }
  if (gt_counts.empty()) throw std::invalid_argument("mae_rmse: empty input");
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < gt_counts.size(); ++i) {
    const double e = static_cast<double>(gt_counts[i]) - pred_counts[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const auto n = static_cast<double>(gt_counts.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

namespace {

/// Indices of `boxes` by descending score, ties kept in input order.
std::vector<std::size_t> score_order(const std::vector<Box>& boxes) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return boxes[a].score.value_or(0.0) > boxes[b].score.value_or(0.0);
  });
  return order;
}

}  // namespace

std::vector<int> match_detections(const std::vector<Box>& preds, const std::vector<Box>& gts,
                                  double iou_threshold) {
  std::vector<int> match(preds.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t p : score_order(preds)) {
    double best = iou_threshold;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(preds[p], gts[g]);
      if (v >= best && (best_gt < 0 || v > best)) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      taken[static_cast<std::size_t>(best_gt)] = true;
      match[p] = best_gt;
    }
  }
  return match;
}

double average_precision_at(const std::vector<DetectionSet>& preds,
                            const std::vector<std::vector<Box>>& gts, double iou_threshold) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("average_precision: prediction and ground-truth image counts differ");
  }
  std::size_t total_gt = 0;
  for (const auto& g : gts) total_gt += g.size();
  if (total_gt == 0) throw std::invalid_argument("average_precision: no ground truth in any image");

  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> all;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto match = match_detections(preds[i].boxes, gts[i], iou_threshold);
    for (std::size_t p = 0; p < match.size(); ++p) {
      all.push_back({preds[i].boxes[p].score.value_or(0.0), match[p] >= 0});
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Scored& a, const Scored& b) { return a.score > b.score; });

  std::vector<double> precision(all.size());
  std::vector<double> recall(all.size());
  double tp = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].tp) tp += 1.0;
    precision[i] = tp / static_cast<double>(i + 1);
    recall[i] = tp / static_cast<double>(total_gt);
  }
  for (std::size_t i = all.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

ApResult average_precision(const std::vector<DetectionSet>& preds,
                           const std::vector<std::vector<Box>>& gts) {
  ApResult r;
  double sum = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double ap = average_precision_at(preds, gts, 0.5 + 0.05 * i);
    if (i == 0) r.ap50 = ap;
    sum += ap;
  }
  r.ap = sum / 10.0;
  return r;
}

double f1_at_threshold(const std::vector<DetectionSet>& preds,
                       const std::vector<std::vector<Box>>& gts, double tau, double iou_threshold) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("f1_at_threshold: prediction and ground-truth image counts differ");
  }
  long tp = 0;
  long fp = 0;
  long fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::vector<Box> kept;
    for (const Box& b : preds[i].boxes) {
      if (b.score.value_or(0.0) >= tau) kept.push_back(b);
    }
    const auto match = match_detections(kept, gts[i], iou_threshold);
    const long hits = std::count_if(match.begin(), match.end(), [](int m) { return m >= 0; });
    tp += hits;
    fp += static_cast<long>(kept.size()) - hits;
    fn += static_cast<long>(gts[i].size()) - hits;
  }
  if (tp == 0) return 0.0;
  return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

MetricsCsv::MetricsCsv(const std::filesystem::path& path, bool append) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
  out_.precision(10);
  if (fresh) out_ << "split,metric,value,step\n";
}

void MetricsCsv::write(const std::string& split, const std::string& metric, double value, long step) {
  out_ << split << ',' << metric << ',' << value << ',' << step << '\n';
}

}  // namespace geco2
