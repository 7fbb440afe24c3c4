#pragma once

#include <torch/torch.h>

#include <span>
#include <string>

#include "geco2/geometry.hpp"

namespace geco2 {

inline constexpr double kDefaultLeakySlope = 0.01;

/// Dense decoder outputs. objectness: (B, H, W); boxes: (B, H, W, 4) holding
/// t, l, r, b in (0, 1).
struct DenseOutputs {
  torch::Tensor objectness;
  torch::Tensor boxes;
};

/// Objectness (linear + LeakyReLU) and box (3-layer GeLU MLP + sigmoid) heads.
class QueryDecoderImpl : public torch::nn::Module {
 public:
  explicit QueryDecoderImpl(int dim, double leaky_slope = kDefaultLeakySlope);

  /// queries: (B, d, H, W) -> (B, H, W)
  torch::Tensor objectness_head(const torch::Tensor& queries);
  /// queries: (B, d, H, W) -> (B, H, W, 4)
  torch::Tensor box_head(const torch::Tensor& queries);
  /// Box head only at `cells`, flat indices into B * H * W; returns the
  /// (B, H, W, 4) map, zero elsewhere.
  torch::Tensor box_head_at(const torch::Tensor& queries, const torch::Tensor& cells);
  DenseOutputs forward(const torch::Tensor& queries);

  torch::nn::Linear objectness{nullptr};
  torch::nn::Linear box_fc1{nullptr}, box_fc2{nullptr}, box_fc3{nullptr};

 private:
  torch::Tensor box_mlp(const torch::Tensor& x);

  double leaky_slope_;
};
TORCH_MODULE(QueryDecoder);

struct ExtractionOptions {
  double threshold = 0.0;
  double nms_iou = kDefaultNmsIou;
};

/// Local maxima of the objectness map above the threshold, decoded into boxes
/// scored by objectness. No suppression.
std::vector<Box> detection_candidates(const ScoreMapView& objectness, std::span<const float> tlrb,
                                      ImageSize image, double threshold);

/// Placeholder for mask-based refinement; returns its input.
DetectionSet refine_boxes(DetectionSet dets);

/// candidates -> refine_boxes -> nms.
DetectionSet extract_detections(const ScoreMapView& objectness, std::span<const float> tlrb,
                                ImageSize image, const ExtractionOptions& options,
                                std::string image_id = {});

/// Batch item `index` of a DenseOutputs.
DetectionSet extract_detections(const DenseOutputs& outs, int64_t index, ImageSize image,
                                const ExtractionOptions& options, std::string image_id = {});

}  // namespace geco2
