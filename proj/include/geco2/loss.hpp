#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <vector>

#include "geco2/decoder.hpp"
#include "geco2/geometry.hpp"

namespace geco2 {

/// Supervision for one image on the H x W query grid (CPU tensors).
struct TrainingTargets {
  torch::Tensor objectness;  // (H, W) float in [0, 1]
  torch::Tensor box_tlrb;    // (H, W, 4) float, zero off the positive cells
  torch::Tensor positive;    // (H, W) bool
  std::vector<Box> gt_boxes;
  GridSize grid;
  ImageSize image;
};

struct LossOptions {
  double mining_ratio = 3.0;
  int64_t mining_floor = 16;
  double box_weight = 1.0;
  double sigma_scale = 0.5;
};

struct LossTerms {
  torch::Tensor total;
  torch::Tensor objectness;
  torch::Tensor box;
};

/// Gaussian objectness target (sigma = sigma_scale * min(w, h) / 2 in grid
/// units, pinned to 1 at each box's centre cell) plus tlrb targets at the
/// centre cells. When two boxes share a centre cell the smaller one wins.
TrainingTargets build_targets(const std::vector<Box>& gt_boxes, GridSize grid, ImageSize image,
                              double sigma_scale = 0.5);

/// Indices of the `count` negative cells with the largest error, ties broken
/// by raster order.
std::vector<int64_t> select_hard_negatives(std::span<const double> errors,
                                           std::span<const bool> positive, int64_t count);

/// Hard-negative-mined squared objectness error plus GIoU box loss for one
/// image. objectness: (H, W); boxes: (H, W, 4).
LossTerms detection_loss(const torch::Tensor& objectness, const torch::Tensor& boxes,
                         const TrainingTargets& targets, const LossOptions& options = {});

/// Mean over the batch of per-image detection losses.
LossTerms detection_loss(const DenseOutputs& outs, const std::vector<TrainingTargets>& targets,
                         const LossOptions& options = {});

/// 1 - GIoU, elementwise over (N, 4) x1, y1, x2, y2 rows.
torch::Tensor giou_loss(const torch::Tensor& pred, const torch::Tensor& target);

/// Mean over boxes of max(width, height); 0 for an empty list.
double average_object_size(const std::vector<Box>& boxes);

/// Whether the auxiliary loss applies to an image: strict size < theta.
bool aux_gate_open(double avg_object_size, double theta_size);

/// main + alpha * aux when the gate is open and alpha != 0, else main.
torch::Tensor total_loss(const torch::Tensor& main, const torch::Tensor& aux,
                         double avg_object_size, double alpha, double theta_size);

}  // namespace geco2
