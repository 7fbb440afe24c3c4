#pragma once

#include <torch/torch.h>

#include <array>
#include <vector>

namespace geco2 {

/// Three pyramid levels, coarsest first: c1 at stride 16, c2 at 8, c3 at 4.
/// Layout (B, d, h, w).
struct FeaturePyramid {
  torch::Tensor c1;
  torch::Tensor c2;
  torch::Tensor c3;

  const torch::Tensor& level(int l) const;
};

inline constexpr std::array<int, 3> kPyramidStrides{16, 8, 4};

struct BackboneOptions {
  int dim = 64;
  std::vector<int> stage_channels{16, 32, 64, 128};
};

/// Four (3x3 conv, GeLU, 2x average-pool) stages. The outputs of stages 2, 3
/// and 4 (strides 4, 8, 16) are projected to `dim` channels by 1x1 convs.
class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const BackboneOptions& options = {});

  /// images: (B, 3, H0, W0) in [0, 1]; H0 and W0 must be multiples of 16.
  FeaturePyramid forward(const torch::Tensor& images);

  const BackboneOptions& options() const { return options_; }

 private:
  BackboneOptions options_;
  torch::nn::ModuleList stages_;
  torch::nn::Conv2d proj_stride4_{nullptr};
  torch::nn::Conv2d proj_stride8_{nullptr};
  torch::nn::Conv2d proj_stride16_{nullptr};
};
TORCH_MODULE(Backbone);

}  // namespace geco2
