#pragma once

#include <torch/torch.h>

namespace geco2 {

inline constexpr int kDefaultPoolSize = 3;

/// Shape encoder shared across scales: (W_b / W0, H_b / H0) -> d through a
/// one-hidden-layer GeLU MLP.
class ShapeEncoderImpl : public torch::nn::Module {
 public:
  explicit ShapeEncoderImpl(int dim);

  /// boxes: (B, k, 4) as x1, y1, x2, y2 in input pixels. Returns (B, k, d).
  torch::Tensor forward(const torch::Tensor& boxes, int image_height, int image_width);

  torch::nn::Linear hidden{nullptr};
  torch::nn::Linear out{nullptr};
};
TORCH_MODULE(ShapeEncoder);

/// RoIAlign with one bilinear sample per bin and border clamping. Cell j of
/// the feature map covers [j, j + 1) in feature coordinates, so image
/// coordinate x maps to x / stride. Returns (B, k, d, pool, pool).
torch::Tensor roi_align(const torch::Tensor& features, const torch::Tensor& boxes, double stride,
                        int pool_size = kDefaultPoolSize);

/// Mean of the RoIAlign grid: one d-vector per exemplar, (B, k, d).
torch::Tensor appearance_prototypes(const torch::Tensor& features, const torch::Tensor& boxes,
                                    double stride, int pool_size = kDefaultPoolSize);

/// Row-wise concatenation, appearance rows first: (B, 2k, d).
torch::Tensor assemble_prototypes(const torch::Tensor& appearance, const torch::Tensor& shape);

}  // namespace geco2
